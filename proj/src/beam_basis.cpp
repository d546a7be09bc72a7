#include "orthoplate/beam_basis.hpp"

#include <cmath>
#include <numbers>

#include "orthoplate/error.hpp"

namespace orthoplate::sim {

QuadratureRule gauss_legendre(std::size_t order, double a, double b) {
  if (order == 0) throw ConfigError("gauss_legendre: order must be positive");
  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  const std::size_t n = order;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    // Newton iteration on P_n from the Tricomi initial guess.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node.
    double p0 = 1.0;
    double p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
      p0 = p1;
      p1 = pk;
    }
    if (n == 1) p0 = 1.0;
    dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = mid - half * x;
    rule.nodes[n - 1 - i] = mid + half * x;
    rule.weights[i] = half * w;
    rule.weights[n - 1 - i] = half * w;
  }
  return rule;
}

double free_free_root(std::size_t k) {
  if (k == 0) throw ConfigError("free_free_root: index starts at 1");
  // cos(x) - 1/cosh(x) = 0, bracketed around (2k+1) pi / 2.
  const double center = (2.0 * static_cast<double>(k) + 1.0) * std::numbers::pi / 2.0;
  auto f = [](double x) { return std::cos(x) - 1.0 / std::cosh(x); };
  double lo = center - 0.5;
  double hi = center + 0.5;
  if (k == 1) lo = center - 0.2;
  double flo = f(lo);
  for (int iter = 0; iter < 200 && hi - lo > 1e-15 * center; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

FreeBeamBasis::FreeBeamBasis(std::size_t count, double length)
    : count_(count), length_(length), scale_(1.0 / std::sqrt(length)) {
  if (count < 2) throw ConfigError("FreeBeamBasis: need at least the two rigid members");
  if (!(length > 0)) throw ConfigError("FreeBeamBasis: length must be positive");
  for (std::size_t k = 1; k + 1 < count; ++k) {
    const double beta = free_free_root(k);
    const double e1 = std::exp(-beta);
    // (sinh - sin) e^{-beta}, kept free of overflow for large beta.
    const double d = 0.5 * (1.0 - e1 * e1) - std::sin(beta) * e1;
    const double sigma = (0.5 * (1.0 + e1 * e1) - std::cos(beta) * e1) / d;
    Elastic el;
    el.beta = beta;
    el.sigma = sigma;
    el.a_plus = (std::cos(beta) - std::sin(beta) - e1) / (2.0 * d);
    el.b_minus = 0.5 * (1.0 + sigma);
    elastic_.push_back(el);
  }
}

std::array<double, 3> FreeBeamBasis::eval(std::size_t index, double x) const {
  const double inv_l = 1.0 / length_;
  if (index == 0) return {scale_, 0.0, 0.0};
  if (index == 1) {
    const double c = std::sqrt(3.0) * scale_;
    return {c * (2.0 * x * inv_l - 1.0), 2.0 * c * inv_l, 0.0};
  }
  const Elastic& el = elastic_.at(index - 2);
  const double xi = x * inv_l;
  const double bx = el.beta * xi;
  const double ep = el.a_plus * std::exp(el.beta * (xi - 1.0));
  const double em = el.b_minus * std::exp(-bx);
  const double c = std::cos(bx);
  const double s = std::sin(bx);
  const double k1 = el.beta * inv_l;
  const double value = ep + em + c - el.sigma * s;
  const double d1 = k1 * (ep - em - s - el.sigma * c);
  const double d2 = k1 * k1 * (ep + em - c + el.sigma * s);
  return {scale_ * value, scale_ * d1, scale_ * d2};
}

BeamIntegrals integrate(const FreeBeamBasis& basis, const QuadratureRule& rule) {
  const auto n = static_cast<Eigen::Index>(basis.size());
  const auto q = static_cast<Eigen::Index>(rule.nodes.size());
  Eigen::MatrixXd f0(n, q), f1(n, q), f2(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index p = 0; p < q; ++p) {
      const auto v = basis.eval(static_cast<std::size_t>(i), rule.nodes[p]);
      const double sw = std::sqrt(rule.weights[p]);
      f0(i, p) = v[0] * sw;
      f1(i, p) = v[1] * sw;
      f2(i, p) = v[2] * sw;
    }
  }
  BeamIntegrals out;
  out.g00 = f0 * f0.transpose();
  out.g11 = f1 * f1.transpose();
  out.g22 = f2 * f2.transpose();
  out.g20 = f2 * f0.transpose();
  return out;
}

}  // namespace orthoplate::sim
