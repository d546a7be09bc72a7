#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "orthoplate/checkpoint.hpp"
#include "orthoplate/dataio.hpp"
#include "orthoplate/metrics.hpp"
#include "orthoplate/models.hpp"
#include "orthoplate/trainer.hpp"

namespace orthoplate::eval {

/// What to sweep. LR cells use h = 0 regardless of h_values.
struct GridSpec {
  std::vector<models::Family> families{models::Family::kLR, models::Family::kMLP,
                                       models::Family::kGRU};
  std::vector<std::size_t> s_values{10, 50, 100, 200};
  std::vector<std::size_t> h_values{1, 2, 4, 6};
  std::size_t n_runs = 3;
  std::size_t gru_width = models::kDefaultGruWidth;
  train::TrainConfig train;
  // Per-family replacements for `train`.
  std::map<models::Family, train::TrainConfig> train_overrides;
  data::SplitFractions fractions;
  data::SplitRule split_rule = data::SplitRule::kNestedHoldout;
  bool normalize = true;

  void validate() const;
  const train::TrainConfig& train_for(models::Family family) const;
};

struct CellKey {
  models::Family family = models::Family::kLR;
  std::size_t s = 0;
  std::size_t h = 0;
  auto operator<=>(const CellKey&) const = default;
};

// Cells in (family, s, h) order, families in enum order.
std::vector<CellKey> grid_cells(const GridSpec& spec);

struct RunScore {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double train_r2 = 0.0;
  double test_r2 = 0.0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;  // wall time; never written to data files
};

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population (n divisor)
};

// Population mean and standard deviation; throws ConfigError when empty.
Moments population_moments(std::span<const double> values);

struct GridResult {
  CellKey key;
  std::vector<RunScore> runs;
  bool scored = false;  // false marks the cell NS
  std::string ns_reason;
  std::size_t best_run = 0;  // index into runs
  Moments train;
  Moments test;
  std::size_t n_scored = 0;
  bool single_run = false;  // sigma is 0 by convention
  std::optional<models::Checkpoint> best_checkpoint;
};

// Argmax of training R^2 over successful runs, ties to the lowest seed.
// Returns nullopt when no run succeeded. Test scores are never consulted.
std::optional<std::size_t> select_best(std::span<const RunScore> runs);

// Fills best_run, scored, moments and flags from `runs`.
void summarize(GridResult& cell);

struct GridOptions {
  std::size_t jobs = 1;
  bool keep_checkpoints = true;
  // Called after each finished run (serialized).
  std::function<void(const CellKey&, const RunScore&)> on_run;
};

/// Trains every (cell, run) pair; runs are independent tasks pulled by
/// `jobs` worker threads. Results are ordered by cell key and run index, so
/// the output does not depend on scheduling. Per-cell windowing,
/// splitting and normalization failures mark the cell NS.
std::vector<GridResult> run_grid(std::shared_ptr<const TimeSeries> series, const GridSpec& spec,
                                 const GridOptions& options = {});
std::vector<GridResult> run_grid(const std::filesystem::path& dataset_path, const GridSpec& spec,
                                 const GridOptions& options = {});

// Builds the split, normalized dataset a grid cell trains on.
data::WindowedDataset prepare_dataset(std::shared_ptr<const TimeSeries> series, std::size_t s,
                                      const GridSpec& spec);

/// `grid_results.csv`: family,s,h,run,seed,train_r2,test_r2,best_flag; NS
/// in the score columns for failed runs.
void write_grid_csv(const std::vector<GridResult>& results, const std::filesystem::path& path);
// Inverse of write_grid_csv; moments and best runs are recomputed.
std::vector<GridResult> read_grid_csv(const std::filesystem::path& path);

struct CurvePoint {
  models::Family family;
  std::size_t fixed = 0;  // h for curves over s, s for curves over h
  std::size_t x = 0;
  Moments train;
  Moments test;
  std::size_t n_scored = 0;
  bool single_run = false;
};

struct Curves {
  std::vector<CurvePoint> vs_s;
  std::vector<CurvePoint> vs_h;
};

// Mean and spread per scored cell, arranged along s at fixed h and along h
// at fixed s.
Curves aggregate_stats(const std::vector<GridResult>& results);

// curves_vs_s.csv, curves_vs_h.csv and curves_metadata.json in `dir`.
void write_curves(const Curves& curves, const std::filesystem::path& dir);

struct ScatterData {
  std::vector<double> y_ref;
  std::vector<double> y_pred;
};

/// Reference and predicted outputs for every target of one block, with the
/// checkpoint's own normalization applied to the inputs.
ScatterData export_scatter(const models::Checkpoint& ckpt, std::shared_ptr<const TimeSeries> series,
                           data::Block block, const data::SplitFractions& fractions = {},
                           data::SplitRule rule = data::SplitRule::kNestedHoldout);

std::string scatter_filename(const models::ModelSpec& spec, data::Block block);
// CSV y_ref,y_pred plus a `<path>.json` sidecar with the identity-line
// endpoints, row count and R^2.
void write_scatter(const ScatterData& data, const models::ModelSpec& spec, data::Block block,
                   const std::filesystem::path& path);

// Train / test R^2 per cell laid out with h as rows and s as columns.
std::string format_summary(const std::vector<GridResult>& results);

}  // namespace orthoplate::eval
