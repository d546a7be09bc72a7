#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "orthoplate/time_series.hpp"

namespace orthoplate::data {

// Reads a `t,u,y` CSV. dt is the median step; steps deviating by more than
// 1e-6 relative are rejected, as are non-increasing times.
TimeSeries load_csv(const std::filesystem::path& path);

// Drops every sample before the first |u| > threshold.
TimeSeries trim_prefix(const TimeSeries& series, double threshold = 0.0);

struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

/// kNestedHoldout carves the test block first as n - floor((1 - test) n),
/// then takes floor(val * rest) of the remaining train+val block for
/// validation and leaves the rest to training. This is the rule behind the
/// 316,078 / 60,205 / 94,071 partition of 470,354 samples.
/// kFlat floors the train and val fractions of n and gives the remainder to
/// test.
enum class SplitRule { kNestedHoldout, kFlat };

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

SplitCounts split_counts(std::size_t n, const SplitFractions& fractions, SplitRule rule);

/// Affine standardization statistics taken from the training block.
struct NormStats {
  double u_mean = 0.0;
  double u_std = 1.0;
  double y_mean = 0.0;
  double y_std = 1.0;

  double normalize_u(double u) const { return (u - u_mean) / u_std; }
  double normalize_y(double y) const { return (y - y_mean) / y_std; }
  double denormalize_y(double y) const { return y * y_std + y_mean; }
};

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

enum class Block { kTrain, kVal, kTest };

const char* block_name(Block block);
Block parse_block(const std::string& name);

/// Sliding-window supervised pairs over a series.
///
/// Pair k has target y[k + s - 1] and input window
/// (u[k + s - 1], u[k + s - 2], ..., u[k]), newest sample first. Windows are
/// views into the shared series; nothing is materialized per pair.
///
/// After splitting, blocks partition the targets chronologically. A block
/// other than the first may draw window history from the preceding block.
class WindowedDataset {
 public:
  WindowedDataset() = default;

  std::size_t window_length() const { return s_; }
  std::size_t num_pairs() const { return series_ ? series_->size() - s_ + 1 : 0; }
  std::size_t target_index(std::size_t pair) const { return pair + s_ - 1; }
  const TimeSeries& series() const { return *series_; }

  bool is_split() const { return split_; }
  // Pair-index bounds {0, end_train, end_val, num_pairs}.
  const std::array<std::size_t, 4>& split_bounds() const { return bounds_; }
  // Sample counts per block before windowing.
  const SplitCounts& sample_counts() const { return counts_; }
  std::size_t block_begin(Block b) const;
  std::size_t block_end(Block b) const;
  std::size_t block_size(Block b) const { return block_end(b) - block_begin(b); }

  bool is_normalized() const { return normalized_; }
  const NormStats& norm_stats() const { return stats_; }

  // Window of pair k in model units (standardized when normalized).
  void window(std::size_t pair, std::span<double> out) const;
  double target(std::size_t pair) const { return y_model_[target_index(pair)]; }
  double raw_target(std::size_t pair) const { return series_->y[target_index(pair)]; }

  // Column b of the result is the window of pairs[b].
  Eigen::MatrixXd gather(std::span<const std::size_t> pairs) const;
  Eigen::MatrixXd gather_range(std::size_t first, std::size_t count) const;

  friend WindowedDataset make_windows(std::shared_ptr<const TimeSeries> series, std::size_t s);
  friend WindowedDataset chronological_split(const WindowedDataset& ds,
                                             const SplitFractions& fractions, SplitRule rule);
  friend WindowedDataset normalize(const WindowedDataset& ds);
  friend WindowedDataset normalize_with(const WindowedDataset& ds, const NormStats& stats);
  friend WindowedDataset load_cache(const std::filesystem::path& path);

 private:
  std::shared_ptr<const TimeSeries> series_;
  std::size_t s_ = 0;
  bool split_ = false;
  SplitCounts counts_;
  std::array<std::size_t, 4> bounds_{};
  bool normalized_ = false;
  NormStats stats_;
  std::shared_ptr<const std::vector<double>> u_model_storage_;
  std::shared_ptr<const std::vector<double>> y_model_storage_;
  const double* u_model_ = nullptr;
  const double* y_model_ = nullptr;
};

WindowedDataset make_windows(std::shared_ptr<const TimeSeries> series, std::size_t s);
WindowedDataset make_windows(const TimeSeries& series, std::size_t s);

// Boundaries are computed on the usable sample count; pairs follow their target.
WindowedDataset chronological_split(const WindowedDataset& ds, const SplitFractions& fractions,
                                    SplitRule rule = SplitRule::kNestedHoldout);

// Standardizes u and y with training-block statistics (population std).
WindowedDataset normalize(const WindowedDataset& ds);
// Applies given statistics, e.g. those stored with a checkpoint.
WindowedDataset normalize_with(const WindowedDataset& ds, const NormStats& stats);

/// Window cache: the 8-byte magic "OPWCACHE", uint32 version (1), uint64 s,
/// uint64 N, float64 t0, float64 dt, then N float64 u and N float64 y, all
/// little-endian. A JSON sidecar at `<path>.json` carries split counts,
/// pair bounds and norm stats.
void save_cache(const WindowedDataset& ds, const std::filesystem::path& path);
WindowedDataset load_cache(const std::filesystem::path& path);

}  // namespace orthoplate::data
