#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "orthoplate/checkpoint.hpp"
#include "orthoplate/dataio.hpp"
#include "orthoplate/error.hpp"
#include "orthoplate/models.hpp"

namespace orthoplate::train {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Rescale the batch gradient to this L2 norm when exceeded; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Partial objects are allowed; absent keys keep their current value.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Mean squared error of the model over a batch (model units). When
/// `with_grad` is set, adds the gradient of that mean to params().grad().
/// Throws NumericalError on a non-finite loss.
double mse_loss(models::Model& model, const Eigen::MatrixXd& windows,
                const Eigen::RowVectorXd& targets, bool with_grad);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

// Losses are reported in output units, i.e. de-normalized.
void write_trace_csv(const std::vector<EpochRecord>& trace, const std::filesystem::path& path);

struct TrainResult {
  models::Checkpoint checkpoint;  // best-validation snapshot
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<EpochRecord> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<EpochRecord>& trace() const { return trace_; }

 private:
  std::vector<EpochRecord> trace_;
};

/// Mini-batch Adam on the training block with early stopping on the full
/// validation loss. The model is initialized from spec.seed and the batch
/// order from cfg.seed. Returns the parameters of the best epoch.
TrainResult train(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                  const TrainConfig& cfg);

// Predictions in output units for pairs [first, first + count).
std::vector<double> predict_range(const models::Model& model, const data::WindowedDataset& ds,
                                  std::size_t first, std::size_t count);
// Model-unit MSE over a block, evaluated in chunks.
double block_loss(const models::Model& model, const data::WindowedDataset& ds, data::Block block);
// R^2 of de-normalized predictions against raw targets of a block.
double block_r2(const models::Model& model, const data::WindowedDataset& ds, data::Block block);

struct RunRecord {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainResult result;
  double train_r2 = 0.0;
  double test_r2 = 0.0;
};

/// n_runs trainings with seeds cfg.seed, cfg.seed + 1, ...; each run seeds
/// both initialization and shuffling. A failing run is recorded and the
/// remaining runs proceed.
std::vector<RunRecord> run_repeats(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                                   const TrainConfig& cfg, std::size_t n_runs = 3);

// One run of run_repeats, exposed so schedulers can distribute runs.
RunRecord run_single(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                     const TrainConfig& cfg, std::size_t run);

}  // namespace orthoplate::train
