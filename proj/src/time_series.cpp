#include "orthoplate/time_series.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "orthoplate/error.hpp"

namespace orthoplate {

void TimeSeries::validate() const {
  if (u.empty() || u.size() != y.size()) {
    throw ConfigError("TimeSeries: u and y must have equal nonzero length");
  }
  if (!(dt > 0) || !std::isfinite(dt)) throw ConfigError("TimeSeries: dt must be positive");
}

void write_csv(const TimeSeries& series, const std::filesystem::path& path) {
  series.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "t,u,y\n";
  char line[96];
  for (std::size_t k = 0; k < series.size(); ++k) {
    const int n = std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", series.time(k),
                                series.u[k], series.y[k]);
    out.write(line, n);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace orthoplate
