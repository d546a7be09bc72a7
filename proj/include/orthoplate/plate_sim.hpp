#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "orthoplate/time_series.hpp"

namespace orthoplate::sim {

using Point = std::array<double, 2>;

/// Orthotropic Kirchhoff plate with free edges, actuated at `actuator`
/// and observed through the x1-curvature at `sensor`.
///
/// Defaults are the sandwich-panel values of the reference rig. The second
/// Poisson ratio is derived as nu1 * E2 / E1 and never stored.
struct PlateConfig {
  double ell1 = 1.0;          // m
  double ell2 = 0.5;          // m
  double thickness = 3.6e-3;  // m
  double rho = 505.6;         // kg/m^3
  double E1 = 23e9;           // Pa
  double E2 = 14e9;           // Pa
  double G = 2.2e9;           // Pa
  double nu1 = 0.25;
  double alpha = 150.0;       // 1/s, viscous damping
  double gain_k = 1.0;        // V m
  Point actuator{0.17, 0.25};
  Point sensor{0.5, 0.21};
  std::size_t n1 = 16;
  std::size_t n2 = 12;
  double dt = 1.0 / 3000.0;   // s
  std::size_t quad_order = 0; // 0 selects 4 * max(n1, n2) + 16

  double nu2() const { return nu1 * E2 / E1; }

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const PlateConfig& cfg);
void from_json(const nlohmann::json& j, PlateConfig& cfg);

/// Bending stiffness per unit mass, m^4/s^2.
struct StiffnessCoeffs {
  double d11 = 0.0;
  double d22 = 0.0;
  double d12 = 0.0;
  double d66 = 0.0;
};

StiffnessCoeffs derive_stiffness(const PlateConfig& cfg);

/// Modal reduction of the Ritz model. Modes are mass-normalized and sorted
/// by eigenvalue; eigenvalues in [-tol, 0) are clamped to zero.
struct ModalSystem {
  std::size_t num_modes = 0;
  std::vector<double> lambdas;      // 1/s^2
  std::vector<double> phi_S0;       // mode value at the actuator
  std::vector<double> curv_sensor;  // d^2/dx1^2 of mode at the sensor, 1/m^2
  double force_scale = 0.0;         // 1 / (rho * thickness)
  std::size_t rigid_count = 0;      // eigenvalues clamped or below tolerance
  double symmetry_residual = 0.0;   // max|K - K^T| / max|K|
};

/// Gram and stiffness matrices of the product basis, exposed for checks.
struct RitzMatrices {
  Eigen::MatrixXd mass;
  Eigen::MatrixXd stiffness;
};

RitzMatrices assemble_ritz(const PlateConfig& cfg);
ModalSystem assemble_modal_system(const PlateConfig& cfg);

/// Pulse excitation. Onsets at period/2 + m * period; each pulse holds its
/// amplitude for `duration_samples` samples.
///
/// With amplitude_jitter > 0 each pulse amplitude is drawn uniformly from
/// amplitude * [1 - jitter, 1 + jitter] using `seed`.
struct PulseTrain {
  double amplitude = 1.0;
  double period = 2.0;
  std::size_t duration_samples = 1;
  double amplitude_jitter = 0.0;
  std::uint64_t seed = 0;
};

std::vector<double> pulse_train(double amplitude, double period, std::size_t duration_samples,
                                std::size_t total_samples, double dt);
std::vector<double> pulse_train(const PulseTrain& train, std::size_t total_samples, double dt);

/// Exact zero-order-hold transition of q'' + alpha q' + lambda q = g u over
/// one step: x_{j+1} = transition * x_j + input * u_j for unit gain g.
struct ModalStep {
  Eigen::Matrix2d transition;
  Eigen::Vector2d input;
};

ModalStep modal_step(double lambda, double alpha, double dt);

/// Modal displacement and velocity per mode.
struct ModalState {
  std::vector<double> q;
  std::vector<double> qdot;
};

/// Integrate the modal ODEs under `u` (sample j held over [t_j, t_{j+1})).
/// y_j = gain_k * sum_k curv_sensor[k] q_k(t_j). Throws NumericalError on
/// non-finite state.
TimeSeries simulate(const ModalSystem& sys, const PlateConfig& cfg, std::span<const double> u);
TimeSeries simulate(const ModalSystem& sys, const PlateConfig& cfg, std::span<const double> u,
                    const ModalState& initial);

// Full modal trajectory, states[j] at t_j, for diagnostics.
std::vector<ModalState> simulate_states(const ModalSystem& sys, const PlateConfig& cfg,
                                        std::span<const double> u, const ModalState& initial);

struct SensorNonlinearity {
  enum class Kind { kNone, kCubic, kSaturation };
  Kind kind = Kind::kNone;
  double eps = 0.0;    // cubic coefficient
  double scale = 1.0;  // saturation level
};

std::vector<double> apply_sensor_nonlinearity(std::span<const double> y,
                                              const SensorNonlinearity& nl);

/// Benchmark excitation and sensor distortion.
///
/// amplitude <= 0 means automatic: pulses are scaled so the peak |y| of the
/// linear response is 1. The saturation level is saturation_factor times
/// the standard deviation of that linear response.
struct ExcitationConfig {
  double duration = 60.0;  // s
  double period = 2.0;     // s
  std::size_t duration_samples = 1;
  double amplitude = 0.0;
  double amplitude_jitter = 0.9;
  std::uint64_t seed = 0;
  SensorNonlinearity::Kind nonlinearity = SensorNonlinearity::Kind::kSaturation;
  double saturation_factor = 1.5;
  double cubic_eps = 0.0;

  void validate() const;
};

const char* nonlinearity_name(SensorNonlinearity::Kind kind);
SensorNonlinearity::Kind parse_nonlinearity(const std::string& name);

void to_json(nlohmann::json& j, const ExcitationConfig& cfg);
// "amplitude" accepts a number or "auto"; absent keys keep their value.
void from_json(const nlohmann::json& j, ExcitationConfig& cfg);

struct GeneratedDataset {
  TimeSeries series;
  ModalSystem system;
  double amplitude = 0.0;  // resolved pulse amplitude
  double linear_std = 0.0;
  SensorNonlinearity nonlinearity;
};

GeneratedDataset generate_dataset(const PlateConfig& plate, const ExcitationConfig& exc);

}  // namespace orthoplate::sim
