#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace orthoplate::sim {

// Gauss-Legendre rule on [a, b].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

QuadratureRule gauss_legendre(std::size_t order, double a, double b);

// k-th root of cos(x) cosh(x) = 1 (k = 1, 2, ...): 4.7300..., 7.8532..., ...
double free_free_root(std::size_t k);

/// One-dimensional Ritz basis on [0, length] for a free edge pair.
///
/// Member 0 is the constant, member 1 the linear rigid rotation, members
/// k >= 2 the free-free Euler-Bernoulli eigenfunctions with wavenumber
/// free_free_root(k - 1) / length. Every member is scaled to unit L2 norm,
/// so the exact Gram matrix is the identity.
class FreeBeamBasis {
 public:
  FreeBeamBasis(std::size_t count, double length);

  std::size_t size() const { return count_; }
  double length() const { return length_; }

  /// Value and first two x-derivatives of member `index` at x.
  std::array<double, 3> eval(std::size_t index, double x) const;

  // Largest wavenumber index among the elastic members (0 if none).
  std::size_t max_wavenumber_index() const { return count_ > 2 ? count_ - 2 : 0; }

 private:
  struct Elastic {
    double beta;     // dimensionless root
    double a_plus;   // coefficient of exp(beta (xi - 1))
    double b_minus;  // coefficient of exp(-beta xi)
    double sigma;
  };

  std::size_t count_;
  double length_;
  double scale_;
  std::vector<Elastic> elastic_;
};

/// Exact-identity Gram matrices of a basis under a quadrature rule:
/// g00 = <f, g>, g11 = <f', g'>, g22 = <f'', g''>, g20(a, b) = <f_a'', f_b>.
struct BeamIntegrals {
  Eigen::MatrixXd g00;
  Eigen::MatrixXd g11;
  Eigen::MatrixXd g22;
  Eigen::MatrixXd g20;
};

BeamIntegrals integrate(const FreeBeamBasis& basis, const QuadratureRule& rule);

}  // namespace orthoplate::sim
