#include "orthoplate/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orthoplate/error.hpp"

namespace orthoplate::nn {

Eigen::MatrixXd elu(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return elu(v); });
}

Eigen::MatrixXd elu_grad(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return elu_grad(v); });
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::MatrixXd tanh(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return std::tanh(v); });
}

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  ParamView view{std::move(name), theta_.size(), rows, cols};
  const std::size_t grown = theta_.size() + view.size();
  theta_.resize(grown, 0.0);
  grad_.resize(grown, 0.0);
  m_.resize(grown, 0.0);
  v_.resize(grown, 0.0);
  views_.push_back(std::move(view));
  return views_.size() - 1;
}

MatrixMap ParamStore::value(std::size_t index) {
  const ParamView& v = views_.at(index);
  return MatrixMap(theta_.data() + v.offset, static_cast<Eigen::Index>(v.rows),
                   static_cast<Eigen::Index>(v.cols));
}

ConstMatrixMap ParamStore::value(std::size_t index) const {
  const ParamView& v = views_.at(index);
  return ConstMatrixMap(theta_.data() + v.offset, static_cast<Eigen::Index>(v.rows),
                        static_cast<Eigen::Index>(v.cols));
}

MatrixMap ParamStore::gradient(std::size_t index) {
  const ParamView& v = views_.at(index);
  return MatrixMap(grad_.data() + v.offset, static_cast<Eigen::Index>(v.rows),
                   static_cast<Eigen::Index>(v.cols));
}

void ParamStore::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void ParamStore::set_theta(std::span<const double> theta) {
  if (theta.size() != theta_.size()) throw ConfigError("ParamStore: parameter count mismatch");
  std::copy(theta.begin(), theta.end(), theta_.begin());
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  for (double g : store.grad_) {
    if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient");
  }
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < store.theta_.size(); ++i) {
    const double g = store.grad_[i];
    store.m_[i] = beta1 * store.m_[i] + (1.0 - beta1) * g;
    store.v_[i] = beta2 * store.v_[i] + (1.0 - beta2) * g * g;
    const double mhat = store.m_[i] / c1;
    const double vhat = store.v_[i] / c2;
    store.theta_[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void glorot_uniform(MatrixMap w, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
  }
}

void orthogonal(MatrixMap w, std::mt19937_64& rng) {
  const Eigen::Index rows = w.rows();
  const Eigen::Index cols = w.cols();
  const Eigen::Index big = std::max(rows, cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(big, big);
  for (Eigen::Index i = 0; i < big; ++i) {
    for (Eigen::Index j = 0; j < big; ++j) a(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < big; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  w = q.topLeftCorner(rows, cols);
}

double check_gradient(const Objective& f, std::span<const double> theta0,
                      const GradientCheckOptions& opts) {
  const std::size_t p = theta0.size();
  std::vector<double> theta(theta0.begin(), theta0.end());
  std::vector<double> analytic(p, 0.0);
  std::vector<double> scratch(p, 0.0);
  f(theta, analytic);

  std::vector<std::size_t> coords(p);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords != 0 && opts.max_coords < p) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  double worst = 0.0;
  for (std::size_t i : coords) {
    const double orig = theta[i];
    const double h = 1e-5 * (1.0 + std::abs(orig));
    const double xp = orig + h;
    const double xm = orig - h;
    theta[i] = xp;
    const double fp = f(theta, scratch);
    theta[i] = xm;
    const double fm = f(theta, scratch);
    theta[i] = orig;
    const double numeric = (fp - fm) / (xp - xm);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.abs_floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace orthoplate::nn
