#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace orthoplate::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// Componentwise activations. Inputs are assumed finite.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd elu(const Eigen::MatrixXd& x);
Eigen::MatrixXd elu_grad(const Eigen::MatrixXd& x);
Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x);
Eigen::MatrixXd tanh(const Eigen::MatrixXd& x);

/// Named slice of the flat parameter vector; matrices are row-major.
struct ParamView {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Flat parameter vector with gradient and Adam moments of the same length.
/// Views are appended in order and tile theta without gaps.
class ParamStore {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return theta_.size(); }
  const std::vector<ParamView>& views() const { return views_; }
  const ParamView& view(std::size_t index) const { return views_.at(index); }

  std::span<double> theta() { return theta_; }
  std::span<const double> theta() const { return theta_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  std::uint64_t step() const { return step_; }

  MatrixMap value(std::size_t index);
  ConstMatrixMap value(std::size_t index) const;
  MatrixMap gradient(std::size_t index);

  void zero_grad();
  // Replaces theta (length must match); optimizer state is left untouched.
  void set_theta(std::span<const double> theta);

  friend void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps);

 private:
  std::vector<ParamView> views_;
  std::vector<double> theta_;
  std::vector<double> grad_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update from the current gradient. Throws
/// NumericalError on a non-finite gradient.
void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps);
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(MatrixMap w, std::mt19937_64& rng);
// Orthonormal rows/columns from the QR factor of a Gaussian matrix.
void orthogonal(MatrixMap w, std::mt19937_64& rng);

/// Scalar objective returning f(theta) and writing its analytic gradient.
using Objective = std::function<double(std::span<const double> theta, std::span<double> grad)>;

struct GradientCheckOptions {
  // Coordinates to probe; 0 or >= p checks all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Denominator floor so that vanishing components compare absolutely.
  double abs_floor = 1e-7;
};

/// Max over probed coordinates of |analytic - numeric| / max(|analytic|,
/// |numeric|, abs_floor), numeric from central differences with step
/// 1e-5 * (1 + |theta_i|).
double check_gradient(const Objective& f, std::span<const double> theta0,
                      const GradientCheckOptions& opts = {});

}  // namespace orthoplate::nn
