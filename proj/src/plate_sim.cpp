#include "orthoplate/plate_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "orthoplate/beam_basis.hpp"
#include "orthoplate/error.hpp"

namespace orthoplate::sim {

namespace {

bool strictly_inside(const Point& p, double l1, double l2) {
  return p[0] > 0.0 && p[0] < l1 && p[1] > 0.0 && p[1] < l2;
}

// sinh(w)/w for z = w^2 >= 0, sin(w)/w for z < 0, with cos/cosh companion.
struct CoshSinc {
  double c;
  double s_over_t;
};

CoshSinc cosh_sinc(double z) {
  if (std::abs(z) < 1e-8) {
    return {1.0 + 0.5 * z + z * z / 24.0, 1.0 + z / 6.0 + z * z / 120.0};
  }
  if (z > 0.0) {
    const double w = std::sqrt(z);
    return {std::cosh(w), std::sinh(w) / w};
  }
  const double w = std::sqrt(-z);
  return {std::cos(w), std::sin(w) / w};
}

}  // namespace

void PlateConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("PlateConfig: ") + what);
  };
  require(ell1 > 0 && ell2 > 0, "side lengths must be positive");
  require(thickness > 0, "thickness must be positive");
  require(rho > 0, "density must be positive");
  require(E1 > 0 && E2 > 0 && G > 0, "elastic moduli must be positive");
  require(nu1 > 0 && nu1 < 0.5, "nu1 must lie in (0, 0.5)");
  require(1.0 - nu1 * nu2() > 0, "1 - nu1*nu2 must be positive");
  require(alpha >= 0 && std::isfinite(alpha), "alpha must be finite and non-negative");
  require(std::isfinite(gain_k), "gain_k must be finite");
  require(strictly_inside(actuator, ell1, ell2), "actuator point must lie inside the plate");
  require(strictly_inside(sensor, ell1, ell2), "sensor point must lie inside the plate");
  require(n1 >= 3 && n2 >= 3, "basis counts must be at least 3");
  require(dt > 0 && std::isfinite(dt), "dt must be positive");
}

void to_json(nlohmann::json& j, const PlateConfig& c) {
  j = nlohmann::json{{"ell1", c.ell1},
                     {"ell2", c.ell2},
                     {"thickness", c.thickness},
                     {"rho", c.rho},
                     {"e1", c.E1},
                     {"e2", c.E2},
                     {"g", c.G},
                     {"nu1", c.nu1},
                     {"alpha", c.alpha},
                     {"gain_k", c.gain_k},
                     {"s0", c.actuator},
                     {"sensor_pt", c.sensor},
                     {"n1", c.n1},
                     {"n2", c.n2},
                     {"dt", c.dt},
                     {"quad_order", c.quad_order}};
}

void from_json(const nlohmann::json& j, PlateConfig& c) {
  if (!j.is_object()) throw ConfigError("plate: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "ell1") c.ell1 = value.get<double>();
    else if (key == "ell2") c.ell2 = value.get<double>();
    else if (key == "thickness") c.thickness = value.get<double>();
    else if (key == "rho") c.rho = value.get<double>();
    else if (key == "e1") c.E1 = value.get<double>();
    else if (key == "e2") c.E2 = value.get<double>();
    else if (key == "g") c.G = value.get<double>();
    else if (key == "nu1") c.nu1 = value.get<double>();
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "gain_k") c.gain_k = value.get<double>();
    else if (key == "s0") c.actuator = value.get<Point>();
    else if (key == "sensor_pt") c.sensor = value.get<Point>();
    else if (key == "n1") c.n1 = value.get<std::size_t>();
    else if (key == "n2") c.n2 = value.get<std::size_t>();
    else if (key == "dt") c.dt = value.get<double>();
    else if (key == "quad_order") c.quad_order = value.get<std::size_t>();
    else throw ConfigError("plate: unknown key '" + key + "'");
  }
}

StiffnessCoeffs derive_stiffness(const PlateConfig& cfg) {
  const double nu2 = cfg.nu2();
  const double denom = 1.0 - cfg.nu1 * nu2;
  if (!(denom > 0)) throw ConfigError("derive_stiffness: 1 - nu1*nu2 must be positive");
  const double h2 = cfg.thickness * cfg.thickness;
  StiffnessCoeffs d;
  d.d11 = cfg.E1 * h2 / (12.0 * cfg.rho * denom);
  d.d22 = cfg.E2 * h2 / (12.0 * cfg.rho * denom);
  d.d12 = nu2 * d.d11;
  d.d66 = cfg.G * h2 / (12.0 * cfg.rho);
  return d;
}

RitzMatrices assemble_ritz(const PlateConfig& cfg) {
  cfg.validate();
  const StiffnessCoeffs d = derive_stiffness(cfg);
  const FreeBeamBasis bx(cfg.n1, cfg.ell1);
  const FreeBeamBasis by(cfg.n2, cfg.ell2);
  const std::size_t order =
      cfg.quad_order != 0 ? cfg.quad_order : 4 * std::max(cfg.n1, cfg.n2) + 16;
  const BeamIntegrals ix = integrate(bx, gauss_legendre(order, 0.0, cfg.ell1));
  const BeamIntegrals iy = integrate(by, gauss_legendre(order, 0.0, cfg.ell2));

  // The members are orthonormal, so a Gram defect exposes an inadequate rule.
  const double gram_defect =
      std::max((ix.g00 - Eigen::MatrixXd::Identity(ix.g00.rows(), ix.g00.cols())).cwiseAbs().maxCoeff(),
               (iy.g00 - Eigen::MatrixXd::Identity(iy.g00.rows(), iy.g00.cols())).cwiseAbs().maxCoeff());
  if (gram_defect > 1e-8) {
    throw NumericalError("assemble_ritz: quadrature order " + std::to_string(order) +
                         " insufficient (Gram defect " + std::to_string(gram_defect) + ")");
  }

  const auto n1 = static_cast<Eigen::Index>(cfg.n1);
  const auto n2 = static_cast<Eigen::Index>(cfg.n2);
  const Eigen::Index n = n1 * n2;
  RitzMatrices out;
  out.mass.resize(n, n);
  out.stiffness.resize(n, n);
  for (Eigen::Index a = 0; a < n1; ++a) {
    for (Eigen::Index b = 0; b < n2; ++b) {
      const Eigen::Index p = a * n2 + b;
      for (Eigen::Index a2 = 0; a2 < n1; ++a2) {
        for (Eigen::Index b2 = 0; b2 < n2; ++b2) {
          const Eigen::Index p2 = a2 * n2 + b2;
          out.mass(p, p2) = ix.g00(a, a2) * iy.g00(b, b2);
          out.stiffness(p, p2) =
              d.d11 * ix.g22(a, a2) * iy.g00(b, b2) + d.d22 * ix.g00(a, a2) * iy.g22(b, b2) +
              d.d12 * (ix.g20(a, a2) * iy.g20(b2, b) + ix.g20(a2, a) * iy.g20(b, b2)) +
              4.0 * d.d66 * ix.g11(a, a2) * iy.g11(b, b2);
        }
      }
    }
  }
  return out;
}

ModalSystem assemble_modal_system(const PlateConfig& cfg) {
  const RitzMatrices ritz = assemble_ritz(cfg);
  const Eigen::MatrixXd& K = ritz.stiffness;

  ModalSystem sys;
  const double kmax = K.cwiseAbs().maxCoeff();
  sys.symmetry_residual = (K - K.transpose()).cwiseAbs().maxCoeff() / kmax;
  if (sys.symmetry_residual > 1e-8) {
    throw NumericalError("assemble_modal_system: stiffness symmetry residual too large");
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(K, ritz.mass);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("assemble_modal_system: generalized eigensolver failed");
  }
  const Eigen::VectorXd& ev = solver.eigenvalues();
  const Eigen::MatrixXd& vecs = solver.eigenvectors();
  const double tol = 1e-6 * ev.maxCoeff();

  const FreeBeamBasis bx(cfg.n1, cfg.ell1);
  const FreeBeamBasis by(cfg.n2, cfg.ell2);
  const auto n1 = static_cast<Eigen::Index>(cfg.n1);
  const auto n2 = static_cast<Eigen::Index>(cfg.n2);
  Eigen::VectorXd at_actuator(n1 * n2), curv_at_sensor(n1 * n2);
  for (Eigen::Index a = 0; a < n1; ++a) {
    const auto xa = bx.eval(static_cast<std::size_t>(a), cfg.actuator[0]);
    const auto xs = bx.eval(static_cast<std::size_t>(a), cfg.sensor[0]);
    for (Eigen::Index b = 0; b < n2; ++b) {
      const auto ya = by.eval(static_cast<std::size_t>(b), cfg.actuator[1]);
      const auto ys = by.eval(static_cast<std::size_t>(b), cfg.sensor[1]);
      at_actuator(a * n2 + b) = xa[0] * ya[0];
      curv_at_sensor(a * n2 + b) = xs[2] * ys[0];
    }
  }

  sys.num_modes = static_cast<std::size_t>(ev.size());
  sys.force_scale = 1.0 / (cfg.rho * cfg.thickness);
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    double lambda = ev(k);
    if (lambda < -tol) {
      throw NumericalError("assemble_modal_system: eigenvalue below -tol");
    }
    if (lambda <= tol) {
      lambda = 0.0;
      ++sys.rigid_count;
    }
    sys.lambdas.push_back(lambda);
    sys.phi_S0.push_back(vecs.col(k).dot(at_actuator));
    sys.curv_sensor.push_back(vecs.col(k).dot(curv_at_sensor));
  }
  return sys;
}

std::vector<double> pulse_train(double amplitude, double period, std::size_t duration_samples,
                                std::size_t total_samples, double dt) {
  PulseTrain train;
  train.amplitude = amplitude;
  train.period = period;
  train.duration_samples = duration_samples;
  return pulse_train(train, total_samples, dt);
}

std::vector<double> pulse_train(const PulseTrain& train, std::size_t total_samples, double dt) {
  if (!(dt > 0)) throw ConfigError("pulse_train: dt must be positive");
  if (!(train.period > dt)) throw ConfigError("pulse_train: period must exceed dt");
  if (train.duration_samples < 1) throw ConfigError("pulse_train: duration must be >= 1 sample");
  if (!(train.amplitude_jitter >= 0 && train.amplitude_jitter <= 1)) {
    throw ConfigError("pulse_train: amplitude_jitter must lie in [0, 1]");
  }
  std::vector<double> u(total_samples, 0.0);
  std::mt19937_64 rng(train.seed);
  std::uniform_real_distribution<double> spread(1.0 - train.amplitude_jitter,
                                                1.0 + train.amplitude_jitter);
  for (std::size_t m = 0;; ++m) {
    const double onset_time = 0.5 * train.period + static_cast<double>(m) * train.period;
    const auto onset = static_cast<std::size_t>(std::llround(onset_time / dt));
    if (onset >= total_samples) break;
    double amp = train.amplitude;
    if (train.amplitude_jitter > 0) amp *= spread(rng);
    const std::size_t end = std::min(total_samples, onset + train.duration_samples);
    for (std::size_t j = onset; j < end; ++j) u[j] = amp;
  }
  return u;
}

ModalStep modal_step(double lambda, double alpha, double dt) {
  if (!(dt > 0)) throw ConfigError("modal_step: dt must be positive");
  if (lambda < 0 || alpha < 0) throw ConfigError("modal_step: lambda and alpha must be >= 0");
  ModalStep step;
  const double decay = std::exp(-0.5 * alpha * dt);
  const CoshSinc cs = cosh_sinc((0.25 * alpha * alpha - lambda) * dt * dt);
  const double s = cs.s_over_t * dt;
  step.transition << decay * (cs.c + 0.5 * alpha * s), decay * s,
                     -decay * lambda * s, decay * (cs.c - 0.5 * alpha * s);
  const double p12 = step.transition(0, 1);
  if (lambda > 0) {
    step.input << (1.0 - step.transition(1, 1) - alpha * p12) / lambda, p12;
  } else {
    // Rigid mode: integral of (1 - exp(-alpha tau)) / alpha over one step.
    const double x = alpha * dt;
    double ratio;
    if (x < 1e-3) {
      ratio = 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0;
    } else {
      ratio = (x + std::expm1(-x)) / (x * x);
    }
    step.input << dt * dt * ratio, p12;
  }
  return step;
}

std::vector<ModalState> simulate_states(const ModalSystem& sys, const PlateConfig& cfg,
                                        std::span<const double> u, const ModalState& initial) {
  const std::size_t m = sys.num_modes;
  if (sys.lambdas.size() != m || sys.phi_S0.size() != m || sys.curv_sensor.size() != m) {
    throw ConfigError("simulate: inconsistent modal system");
  }
  if (initial.q.size() != m || initial.qdot.size() != m) {
    throw ConfigError("simulate: initial state has the wrong size");
  }
  std::vector<ModalStep> steps;
  steps.reserve(m);
  for (std::size_t k = 0; k < m; ++k) steps.push_back(modal_step(sys.lambdas[k], cfg.alpha, cfg.dt));

  std::vector<ModalState> states;
  states.reserve(u.size());
  ModalState x = initial;
  for (std::size_t j = 0; j < u.size(); ++j) {
    states.push_back(x);
    for (std::size_t k = 0; k < m; ++k) {
      const ModalStep& st = steps[k];
      const double g = sys.phi_S0[k] * sys.force_scale * u[j];
      const double q = st.transition(0, 0) * x.q[k] + st.transition(0, 1) * x.qdot[k] + st.input(0) * g;
      const double v = st.transition(1, 0) * x.q[k] + st.transition(1, 1) * x.qdot[k] + st.input(1) * g;
      if (!std::isfinite(q) || !std::isfinite(v)) {
        throw NumericalError("simulate: non-finite modal state at sample " + std::to_string(j));
      }
      x.q[k] = q;
      x.qdot[k] = v;
    }
  }
  return states;
}

TimeSeries simulate(const ModalSystem& sys, const PlateConfig& cfg, std::span<const double> u,
                    const ModalState& initial) {
  const std::size_t m = sys.num_modes;
  if (initial.q.size() != m || initial.qdot.size() != m) {
    throw ConfigError("simulate: initial state has the wrong size");
  }
  std::vector<ModalStep> steps;
  steps.reserve(m);
  for (std::size_t k = 0; k < m; ++k) steps.push_back(modal_step(sys.lambdas.at(k), cfg.alpha, cfg.dt));

  TimeSeries out;
  out.t0 = 0.0;
  out.dt = cfg.dt;
  out.u.assign(u.begin(), u.end());
  out.y.resize(u.size());
  std::vector<double> q = initial.q;
  std::vector<double> v = initial.qdot;
  for (std::size_t j = 0; j < u.size(); ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) acc += sys.curv_sensor[k] * q[k];
    out.y[j] = cfg.gain_k * acc;
    if (!std::isfinite(out.y[j])) {
      throw NumericalError("simulate: non-finite output at sample " + std::to_string(j));
    }
    for (std::size_t k = 0; k < m; ++k) {
      const ModalStep& st = steps[k];
      const double g = sys.phi_S0[k] * sys.force_scale * u[j];
      const double qn = st.transition(0, 0) * q[k] + st.transition(0, 1) * v[k] + st.input(0) * g;
      const double vn = st.transition(1, 0) * q[k] + st.transition(1, 1) * v[k] + st.input(1) * g;
      q[k] = qn;
      v[k] = vn;
    }
  }
  return out;
}

TimeSeries simulate(const ModalSystem& sys, const PlateConfig& cfg, std::span<const double> u) {
  ModalState zero;
  zero.q.assign(sys.num_modes, 0.0);
  zero.qdot.assign(sys.num_modes, 0.0);
  return simulate(sys, cfg, u, zero);
}

std::vector<double> apply_sensor_nonlinearity(std::span<const double> y,
                                              const SensorNonlinearity& nl) {
  std::vector<double> out(y.begin(), y.end());
  switch (nl.kind) {
    case SensorNonlinearity::Kind::kNone:
      break;
    case SensorNonlinearity::Kind::kCubic:
      if (!std::isfinite(nl.eps)) throw ConfigError("cubic nonlinearity: eps must be finite");
      for (double& v : out) v = v + nl.eps * v * v * v;
      break;
    case SensorNonlinearity::Kind::kSaturation:
      if (!(nl.scale > 0) || !std::isfinite(nl.scale)) {
        throw ConfigError("saturation nonlinearity: scale must be positive and finite");
      }
      for (double& v : out) {
        // tanh rounds to +-1 for large arguments; keep the bound strict.
        const double bound = std::nextafter(nl.scale, 0.0);
        v = std::clamp(nl.scale * std::tanh(v / nl.scale), -bound, bound);
      }
      break;
  }
  return out;
}

void ExcitationConfig::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw ConfigError("excitation.duration must be positive");
  }
  if (!(period > 0.0) || !std::isfinite(period)) throw ConfigError("excitation.period must be positive");
  if (duration_samples < 1) throw ConfigError("excitation.duration_samples must be >= 1");
  if (!std::isfinite(amplitude)) throw ConfigError("excitation.amplitude must be finite");
  if (!(amplitude_jitter >= 0.0 && amplitude_jitter <= 1.0)) {
    throw ConfigError("excitation.amplitude_jitter must lie in [0, 1]");
  }
  if (nonlinearity == SensorNonlinearity::Kind::kSaturation &&
      (!(saturation_factor > 0.0) || !std::isfinite(saturation_factor))) {
    throw ConfigError("excitation.saturation_factor must be positive");
  }
  if (!std::isfinite(cubic_eps)) throw ConfigError("excitation.cubic_eps must be finite");
}

const char* nonlinearity_name(SensorNonlinearity::Kind kind) {
  switch (kind) {
    case SensorNonlinearity::Kind::kNone: return "none";
    case SensorNonlinearity::Kind::kCubic: return "cubic";
    case SensorNonlinearity::Kind::kSaturation: return "saturation";
  }
  return "?";
}

SensorNonlinearity::Kind parse_nonlinearity(const std::string& name) {
  if (name == "none") return SensorNonlinearity::Kind::kNone;
  if (name == "cubic") return SensorNonlinearity::Kind::kCubic;
  if (name == "saturation") return SensorNonlinearity::Kind::kSaturation;
  throw ConfigError("unknown nonlinearity '" + name + "' (expected none, cubic or saturation)");
}

void to_json(nlohmann::json& j, const ExcitationConfig& c) {
  j = nlohmann::json{{"duration", c.duration},
                     {"period", c.period},
                     {"duration_samples", c.duration_samples},
                     {"amplitude_jitter", c.amplitude_jitter},
                     {"seed", c.seed},
                     {"nonlinearity", nonlinearity_name(c.nonlinearity)},
                     {"saturation_factor", c.saturation_factor},
                     {"cubic_eps", c.cubic_eps}};
  if (c.amplitude > 0.0) {
    j["amplitude"] = c.amplitude;
  } else {
    j["amplitude"] = "auto";
  }
}

void from_json(const nlohmann::json& j, ExcitationConfig& c) {
  if (!j.is_object()) throw ConfigError("excitation: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "duration") c.duration = value.get<double>();
    else if (key == "period") c.period = value.get<double>();
    else if (key == "duration_samples") c.duration_samples = value.get<std::size_t>();
    else if (key == "amplitude") {
      if (value.is_string()) {
        if (value.get<std::string>() != "auto") {
          throw ConfigError("excitation.amplitude: expected a number or \"auto\"");
        }
        c.amplitude = 0.0;
      } else {
        c.amplitude = value.get<double>();
      }
    }
    else if (key == "amplitude_jitter") c.amplitude_jitter = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "nonlinearity") c.nonlinearity = parse_nonlinearity(value.get<std::string>());
    else if (key == "saturation_factor") c.saturation_factor = value.get<double>();
    else if (key == "cubic_eps") c.cubic_eps = value.get<double>();
    else throw ConfigError("excitation: unknown key '" + key + "'");
  }
}

GeneratedDataset generate_dataset(const PlateConfig& plate, const ExcitationConfig& exc) {
  plate.validate();
  exc.validate();
  const double samples = std::round(exc.duration / plate.dt);
  if (samples < 2) throw ConfigError("excitation.duration covers fewer than two samples");
  const auto n = static_cast<std::size_t>(samples);

  GeneratedDataset out;
  out.system = assemble_modal_system(plate);
  PulseTrain train;
  train.amplitude = exc.amplitude > 0.0 ? exc.amplitude : 1.0;
  train.period = exc.period;
  train.duration_samples = exc.duration_samples;
  train.amplitude_jitter = exc.amplitude_jitter;
  train.seed = exc.seed;
  const std::vector<double> u = pulse_train(train, n, plate.dt);
  out.series = simulate(out.system, plate, u);
  out.amplitude = train.amplitude;

  if (exc.amplitude <= 0.0) {
    double peak = 0.0;
    for (double v : out.series.y) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0)) throw ConfigError("automatic amplitude: the linear response is identically zero");
    const double scale = 1.0 / peak;
    for (double& v : out.series.u) v *= scale;
    for (double& v : out.series.y) v *= scale;
    out.amplitude = scale;
  }

  double mean = 0.0;
  for (double v : out.series.y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : out.series.y) var += (v - mean) * (v - mean);
  out.linear_std = std::sqrt(var / static_cast<double>(n));

  out.nonlinearity.kind = exc.nonlinearity;
  out.nonlinearity.eps = exc.cubic_eps;
  if (exc.nonlinearity == SensorNonlinearity::Kind::kSaturation) {
    if (!(out.linear_std > 0.0)) throw ConfigError("saturation: the linear response has zero spread");
    out.nonlinearity.scale = exc.saturation_factor * out.linear_std;
  }
  out.series.y = apply_sensor_nonlinearity(out.series.y, out.nonlinearity);
  return out;
}

}  // namespace orthoplate::sim
