#pragma once

#include <span>

namespace orthoplate::eval {

// 1 - SSE / SST with the mean taken over y_ref. Throws ConfigError on length
// mismatch, fewer than two points, or a constant reference.
double r2_score(std::span<const double> y_ref, std::span<const double> y_pred);

// Mean squared difference; throws ConfigError on length mismatch or empty input.
double mean_squared_error(std::span<const double> y_ref, std::span<const double> y_pred);

}  // namespace orthoplate::eval
