#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace orthoplate {

/// Synchronized input/output record sampled at a fixed interval.
/// Sample k sits at t0 + k * dt.
struct TimeSeries {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<double> u;
  std::vector<double> y;

  std::size_t size() const { return u.size(); }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }

  // Throws ConfigError unless u, y have equal nonzero length and dt > 0.
  void validate() const;
};

// CSV with header `t,u,y` and 17 significant digits per value.
void write_csv(const TimeSeries& series, const std::filesystem::path& path);

}  // namespace orthoplate
