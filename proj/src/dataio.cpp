#include "orthoplate/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "orthoplate/error.hpp"

namespace orthoplate::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_field(std::string_view field, std::size_t line_no) {
  field = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw IoError("load_csv: malformed number '" + std::string(field) + "' on line " +
                  std::to_string(line_no));
  }
  return v;
}

std::size_t floor_count(double x) {
  // Guard exact products such as (2/3) * 9 against landing just below an integer.
  return static_cast<std::size_t>(std::floor(x * (1.0 + 1e-12)));
}

void stats(std::span<const double> v, double& mean, double& sd) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  mean = m;
  sd = std::sqrt(var / static_cast<double>(v.size()));
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("load_cache: truncated file");
  return v;
}

constexpr char kCacheMagic[8] = {'O', 'P', 'W', 'C', 'A', 'C', 'H', 'E'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

TimeSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_csv: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("load_csv: empty file '" + path.string() + "'");
  {
    std::string header;
    for (char c : line) {
      if (c != ' ' && c != '\t' && c != '\r') header.push_back(c);
    }
    if (header != "t,u,y") throw IoError("load_csv: expected header 't,u,y'");
  }
  std::vector<double> t;
  TimeSeries series;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto c1 = row.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : row.find(',', c1 + 1);
    if (c2 == std::string_view::npos || row.find(',', c2 + 1) != std::string_view::npos) {
      throw IoError("load_csv: expected 3 fields on line " + std::to_string(line_no));
    }
    t.push_back(parse_field(row.substr(0, c1), line_no));
    series.u.push_back(parse_field(row.substr(c1 + 1, c2 - c1 - 1), line_no));
    series.y.push_back(parse_field(row.substr(c2 + 1), line_no));
  }
  if (t.size() < 2) throw IoError("load_csv: need at least two samples to infer dt");

  std::vector<double> steps(t.size() - 1);
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    steps[k] = t[k + 1] - t[k];
    if (!(steps[k] > 0)) {
      throw IoError("load_csv: time is not strictly increasing at row " + std::to_string(k + 2));
    }
  }
  std::vector<double> sorted = steps;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double dt = sorted[sorted.size() / 2];
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (std::abs(steps[k] - dt) > 1e-6 * dt) {
      throw IoError("load_csv: inconsistent time step at row " + std::to_string(k + 2));
    }
  }
  series.t0 = t.front();
  series.dt = dt;
  return series;
}

TimeSeries trim_prefix(const TimeSeries& series, double threshold) {
  series.validate();
  if (!(threshold >= 0)) throw ConfigError("trim_prefix: threshold must be non-negative");
  std::size_t first = 0;
  while (first < series.size() && !(std::abs(series.u[first]) > threshold)) ++first;
  if (first == series.size()) throw ConfigError("trim_prefix: no input impulse found");
  TimeSeries out;
  out.t0 = series.time(first);
  out.dt = series.dt;
  out.u.assign(series.u.begin() + static_cast<std::ptrdiff_t>(first), series.u.end());
  out.y.assign(series.y.begin() + static_cast<std::ptrdiff_t>(first), series.y.end());
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitFractions& f, SplitRule rule) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0)) {
    throw ConfigError("split: fractions must be positive");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  const auto nd = static_cast<double>(n);
  SplitCounts c;
  if (rule == SplitRule::kFlat) {
    c.train = floor_count(f.train * nd);
    c.val = floor_count(f.val * nd);
    c.test = n - c.train - c.val;
  } else {
    const std::size_t rest = floor_count((1.0 - f.test) * nd);
    c.test = n - rest;
    c.val = floor_count(f.val * static_cast<double>(rest));
    c.train = rest - c.val;
  }
  if (c.train == 0 || c.val == 0 || c.test == 0) throw ConfigError("split: a block is empty");
  return c;
}

void to_json(nlohmann::json& j, const NormStats& s) {
  j = nlohmann::json{{"u_mean", s.u_mean}, {"u_std", s.u_std}, {"y_mean", s.y_mean}, {"y_std", s.y_std}};
}

void from_json(const nlohmann::json& j, NormStats& s) {
  s.u_mean = j.at("u_mean").get<double>();
  s.u_std = j.at("u_std").get<double>();
  s.y_mean = j.at("y_mean").get<double>();
  s.y_std = j.at("y_std").get<double>();
}

const char* block_name(Block block) {
  switch (block) {
    case Block::kTrain: return "train";
    case Block::kVal: return "val";
    case Block::kTest: return "test";
  }
  return "?";
}

Block parse_block(const std::string& name) {
  if (name == "train") return Block::kTrain;
  if (name == "val") return Block::kVal;
  if (name == "test") return Block::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::size_t WindowedDataset::block_begin(Block b) const {
  if (!split_) throw ConfigError("dataset has not been split");
  return bounds_[static_cast<std::size_t>(b)];
}

std::size_t WindowedDataset::block_end(Block b) const {
  if (!split_) throw ConfigError("dataset has not been split");
  return bounds_[static_cast<std::size_t>(b) + 1];
}

void WindowedDataset::window(std::size_t pair, std::span<double> out) const {
  if (out.size() != s_) throw ConfigError("window: output span has the wrong length");
  const double* newest = u_model_ + target_index(pair);
  for (std::size_t j = 0; j < s_; ++j) out[j] = *(newest - j);
}

Eigen::MatrixXd WindowedDataset::gather(std::span<const std::size_t> pairs) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(s_), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    window(pairs[b], std::span<double>(x.col(static_cast<Eigen::Index>(b)).data(), s_));
  }
  return x;
}

Eigen::MatrixXd WindowedDataset::gather_range(std::size_t first, std::size_t count) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(s_), static_cast<Eigen::Index>(count));
  for (std::size_t b = 0; b < count; ++b) {
    window(first + b, std::span<double>(x.col(static_cast<Eigen::Index>(b)).data(), s_));
  }
  return x;
}

WindowedDataset make_windows(std::shared_ptr<const TimeSeries> series, std::size_t s) {
  if (!series) throw ConfigError("make_windows: null series");
  series->validate();
  if (s < 1) throw ConfigError("make_windows: window length must be >= 1");
  if (series->size() < s) throw ConfigError("make_windows: series shorter than window length");
  WindowedDataset ds;
  ds.series_ = std::move(series);
  ds.s_ = s;
  ds.u_model_ = ds.series_->u.data();
  ds.y_model_ = ds.series_->y.data();
  ds.bounds_ = {0, ds.num_pairs(), ds.num_pairs(), ds.num_pairs()};
  return ds;
}

WindowedDataset make_windows(const TimeSeries& series, std::size_t s) {
  return make_windows(std::make_shared<const TimeSeries>(series), s);
}

WindowedDataset chronological_split(const WindowedDataset& ds, const SplitFractions& fractions,
                                    SplitRule rule) {
  if (!ds.series_) throw ConfigError("chronological_split: empty dataset");
  const SplitCounts c = split_counts(ds.series_->size(), fractions, rule);
  if (c.train < ds.s_) {
    throw ConfigError("chronological_split: training block holds no complete window");
  }
  WindowedDataset out = ds;
  out.split_ = true;
  out.counts_ = c;
  const std::size_t end_train = c.train - ds.s_ + 1;
  out.bounds_ = {0, end_train, end_train + c.val, ds.num_pairs()};
  return out;
}

WindowedDataset normalize_with(const WindowedDataset& ds, const NormStats& st) {
  if (!ds.series_) throw ConfigError("normalize: empty dataset");
  if (!(st.u_std > 0) || !(st.y_std > 0)) throw ConfigError("normalize: zero variance");
  WindowedDataset out = ds;
  auto u = std::make_shared<std::vector<double>>(ds.series_->u);
  auto y = std::make_shared<std::vector<double>>(ds.series_->y);
  for (double& v : *u) v = st.normalize_u(v);
  for (double& v : *y) v = st.normalize_y(v);
  out.u_model_storage_ = u;
  out.y_model_storage_ = y;
  out.u_model_ = u->data();
  out.y_model_ = y->data();
  out.normalized_ = true;
  out.stats_ = st;
  return out;
}

WindowedDataset normalize(const WindowedDataset& ds) {
  if (!ds.split_) throw ConfigError("normalize: split the dataset first");
  const TimeSeries& series = *ds.series_;
  NormStats st;
  const std::size_t n_train = ds.counts_.train;
  stats(std::span<const double>(series.u.data(), n_train), st.u_mean, st.u_std);
  stats(std::span<const double>(series.y.data() + ds.s_ - 1, n_train - ds.s_ + 1), st.y_mean,
        st.y_std);
  if (!(st.u_std > 0)) throw ConfigError("normalize: zero variance in training inputs");
  if (!(st.y_std > 0)) throw ConfigError("normalize: zero variance in training targets");
  return normalize_with(ds, st);
}

void save_cache(const WindowedDataset& ds, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "cache format is little-endian");
  const TimeSeries& series = ds.series();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_cache: cannot open '" + path.string() + "'");
  out.write(kCacheMagic, sizeof kCacheMagic);
  write_pod(out, kCacheVersion);
  write_pod(out, static_cast<std::uint64_t>(ds.window_length()));
  write_pod(out, static_cast<std::uint64_t>(series.size()));
  write_pod(out, series.t0);
  write_pod(out, series.dt);
  out.write(reinterpret_cast<const char*>(series.u.data()),
            static_cast<std::streamsize>(series.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(series.y.data()),
            static_cast<std::streamsize>(series.size() * sizeof(double)));
  if (!out) throw IoError("save_cache: write failed");

  nlohmann::json side;
  side["format"] = "orthoplate-window-cache";
  side["version"] = kCacheVersion;
  side["s"] = ds.window_length();
  side["num_pairs"] = ds.num_pairs();
  side["split"] = ds.is_split();
  if (ds.is_split()) {
    const SplitCounts& c = ds.sample_counts();
    side["sample_counts"] = {c.train, c.val, c.test};
    side["pair_bounds"] = ds.split_bounds();
  }
  side["normalized"] = ds.is_normalized();
  if (ds.is_normalized()) side["norm_stats"] = ds.norm_stats();
  std::ofstream js(path.string() + ".json");
  js << side.dump(2) << "\n";
  if (!js) throw IoError("save_cache: sidecar write failed");
}

WindowedDataset load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_cache: cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
    throw IoError("load_cache: bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kCacheVersion) throw IoError("load_cache: unsupported version");
  const auto s = read_pod<std::uint64_t>(in);
  const auto n = read_pod<std::uint64_t>(in);
  auto series = std::make_shared<TimeSeries>();
  series->t0 = read_pod<double>(in);
  series->dt = read_pod<double>(in);
  series->u.resize(n);
  series->y.resize(n);
  in.read(reinterpret_cast<char*>(series->u.data()), static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(series->y.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("load_cache: truncated file");

  std::ifstream js(path.string() + ".json");
  if (!js) throw IoError("load_cache: missing sidecar");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_cache: bad sidecar: ") + e.what());
  }
  WindowedDataset ds = make_windows(std::shared_ptr<const TimeSeries>(series), s);
  if (side.value("split", false)) {
    const auto counts = side.at("sample_counts").get<std::array<std::size_t, 3>>();
    // Reapply the stored boundaries directly.
    WindowedDataset split = ds;
    split.split_ = true;
    split.counts_ = SplitCounts{counts[0], counts[1], counts[2]};
    split.bounds_ = side.at("pair_bounds").get<std::array<std::size_t, 4>>();
    ds = split;
  }
  if (side.value("normalized", false)) ds = normalize_with(ds, side.at("norm_stats").get<NormStats>());
  return ds;
}

}  // namespace orthoplate::data
