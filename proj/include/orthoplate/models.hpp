#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "orthoplate/dataio.hpp"
#include "orthoplate/nn_core.hpp"

namespace orthoplate::models {

enum class Family { kLR, kMLP, kGRU };

const char* family_name(Family family);
// Accepts LR, MLP, GRU in any letter case; throws ConfigError otherwise.
Family parse_family(const std::string& name);

/// Architecture descriptor. LR has h = 0 and no widths; MLP hidden widths
/// all equal s; GRU widths are per layer with a scalar input stream.
struct ModelSpec {
  Family family = Family::kLR;
  std::size_t s = 1;
  std::size_t h = 0;
  std::vector<std::size_t> widths;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kDefaultGruWidth = 16;

ModelSpec make_spec(Family family, std::size_t s, std::size_t h,
                    std::size_t gru_width = kDefaultGruWidth, std::uint64_t seed = 0);

// Closed-form parameter count for a valid spec.
std::size_t param_count(const ModelSpec& spec);

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

/// Surrogate y_hat = f(u_s; theta).
///
/// Batches are s x B matrices whose columns are newest-first windows.
/// predict() is const and safe to call concurrently; forward_train() caches
/// intermediates consumed by the next backward().
class Model {
 public:
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  virtual Eigen::RowVectorXd predict(const Eigen::MatrixXd& windows) const = 0;
  double predict_one(std::span<const double> window) const;

  virtual Eigen::RowVectorXd forward_train(const Eigen::MatrixXd& windows) = 0;
  // Adds sum_b d_pred(b) * d y_hat_b / d theta to params().grad().
  virtual void backward(const Eigen::RowVectorXd& d_pred) = 0;

 protected:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  void check_input(const Eigen::MatrixXd& windows) const;

  ModelSpec spec_;
  nn::ParamStore params_;
};

class LinearRegression final : public Model {
 public:
  explicit LinearRegression(ModelSpec spec);
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& windows) const override;
  Eigen::RowVectorXd forward_train(const Eigen::MatrixXd& windows) override;
  void backward(const Eigen::RowVectorXd& d_pred) override;

 private:
  std::size_t w_ = 0;
  std::size_t b_ = 0;
  Eigen::MatrixXd input_;
};

class Mlp final : public Model {
 public:
  explicit Mlp(ModelSpec spec);
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& windows) const override;
  Eigen::RowVectorXd forward_train(const Eigen::MatrixXd& windows) override;
  void backward(const Eigen::RowVectorXd& d_pred) override;

 private:
  std::vector<std::size_t> weights_;  // W_1 .. W_h
  std::vector<std::size_t> biases_;   // b_1 .. b_h
  std::size_t out_w_ = 0;
  std::size_t out_b_ = 0;
  std::vector<Eigen::MatrixXd> pre_;   // Z_i
  std::vector<Eigen::MatrixXd> post_;  // A_0 = input, A_i = ELU(Z_i)
};

/// Stacked GRU. Per layer the update/reset recurrent weights are stored as
/// one (2n x n) block, the candidate recurrent weight as (n x n), the input
/// weights for update/reset/candidate as one (3n x n_in) block and the
/// biases as (3n x 1), rows always ordered update, reset, candidate.
class Gru final : public Model {
 public:
  explicit Gru(ModelSpec spec);
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& windows) const override;
  Eigen::RowVectorXd forward_train(const Eigen::MatrixXd& windows) override;
  void backward(const Eigen::RowVectorXd& d_pred) override;

  /// Per layer, step-major (n x s*B) records of one forward pass.
  struct LayerTrace {
    Eigen::MatrixXd update;     // v_j
    Eigen::MatrixXd reset;      // r_j
    Eigen::MatrixXd candidate;  // x~_j
    Eigen::MatrixXd hidden;     // x_j, j = 1..s
    Eigen::MatrixXd previous;   // x_{j-1}
  };
  std::vector<LayerTrace> trace(const Eigen::MatrixXd& windows) const;

  struct LayerParams {
    std::size_t w_gates;  // [W_v; W_r]
    std::size_t w_cand;   // W_x
    std::size_t v_in;     // [V_v; V_r; V_x]
    std::size_t bias;     // [b_v; b_r; b_x]
  };
  const std::vector<LayerParams>& layer_params() const { return layers_; }

 private:
  // Oldest-first input stream: column j*B + b holds window b at step j.
  static void input_stream(const Eigen::MatrixXd& windows, Eigen::MatrixXd& out);
  const Eigen::MatrixXd& layer_input(std::size_t layer) const {
    return layer == 0 ? stream_ : cache_[layer - 1].hidden;
  }
  void run_layer(std::size_t layer, const Eigen::MatrixXd& input, std::size_t batch,
                 LayerTrace& out) const;

  std::vector<LayerParams> layers_;
  std::size_t out_w_ = 0;
  std::size_t out_b_ = 0;
  // Training buffers are kept across batches; reallocating these
  // multi-megabyte blocks every step costs more than the arithmetic.
  Eigen::MatrixXd stream_;  // bottom layer input
  std::vector<LayerTrace> cache_;
  Eigen::MatrixXd d_pre_;
  Eigen::MatrixXd gated_prev_;
  Eigen::MatrixXd d_out_;
  Eigen::MatrixXd d_below_;
  std::size_t batch_ = 0;
};

// Randomly initialized from spec.seed.
std::unique_ptr<Model> make_model(const ModelSpec& spec);
std::unique_ptr<Model> make_model(const ModelSpec& spec, std::span<const double> theta);

// Single-window affine map W . u_s + b.
double lr_forward(std::span<const double> w, double b, std::span<const double> window);

struct LinearFit {
  std::vector<double> w;
  double b = 0.0;
};

/// Least squares W, b over one block in model units, via centered normal
/// equations with ridge jitter 1e-10 * trace. Throws NumericalError when the
/// system cannot be solved.
LinearFit lr_fit_closed_form(const data::WindowedDataset& ds,
                             data::Block block = data::Block::kTrain);

}  // namespace orthoplate::models
