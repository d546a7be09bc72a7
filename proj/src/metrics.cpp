#include "orthoplate/metrics.hpp"

#include "orthoplate/error.hpp"

namespace orthoplate::eval {

double r2_score(std::span<const double> y_ref, std::span<const double> y_pred) {
  if (y_ref.size() != y_pred.size()) throw ConfigError("r2_score: length mismatch");
  if (y_ref.size() < 2) throw ConfigError("r2_score: need at least two points");
  double mean = 0.0;
  for (double y : y_ref) mean += y;
  mean /= static_cast<double>(y_ref.size());
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    const double r = y_ref[i] - y_pred[i];
    const double d = y_ref[i] - mean;
    sse += r * r;
    sst += d * d;
  }
  if (!(sst > 0.0)) throw ConfigError("r2_score: reference has zero variance");
  return 1.0 - sse / sst;
}

double mean_squared_error(std::span<const double> y_ref, std::span<const double> y_pred) {
  if (y_ref.size() != y_pred.size()) throw ConfigError("mean_squared_error: length mismatch");
  if (y_ref.empty()) throw ConfigError("mean_squared_error: empty input");
  double sse = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    const double r = y_ref[i] - y_pred[i];
    sse += r * r;
  }
  return sse / static_cast<double>(y_ref.size());
}

}  // namespace orthoplate::eval
