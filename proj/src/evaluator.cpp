#include "orthoplate/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "orthoplate/error.hpp"

namespace orthoplate::eval {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

// Rough relative cost used only to start long tasks first.
double task_cost(const CellKey& key) {
  const double s = static_cast<double>(key.s);
  switch (key.family) {
    case models::Family::kLR: return s;
    case models::Family::kMLP: return s * s * static_cast<double>(key.h) / 10.0;
    case models::Family::kGRU: return 500.0 * s * static_cast<double>(key.h);
  }
  return s;
}

}  // namespace

void GridSpec::validate() const {
  if (families.empty()) throw ConfigError("grid.families must not be empty");
  if (s_values.empty()) throw ConfigError("grid.s_values must not be empty");
  const bool needs_h = std::any_of(families.begin(), families.end(),
                                   [](models::Family f) { return f != models::Family::kLR; });
  if (needs_h && h_values.empty()) throw ConfigError("grid.h_values must not be empty");
  for (std::size_t s : s_values) {
    if (s < 1) throw ConfigError("grid.s_values entries must be >= 1");
  }
  for (std::size_t h : h_values) {
    if (h < 1) throw ConfigError("grid.h_values entries must be >= 1 (LR cells use h = 0)");
  }
  if (n_runs < 1) throw ConfigError("grid.n_runs must be >= 1");
  if (gru_width < 1) throw ConfigError("model.gru_width must be >= 1");
  train.validate();
  for (const auto& [family, cfg] : train_overrides) cfg.validate();
}

const train::TrainConfig& GridSpec::train_for(models::Family family) const {
  const auto it = train_overrides.find(family);
  return it == train_overrides.end() ? train : it->second;
}

std::vector<CellKey> grid_cells(const GridSpec& spec) {
  std::set<CellKey> cells;
  for (models::Family f : spec.families) {
    for (std::size_t s : spec.s_values) {
      if (f == models::Family::kLR) {
        cells.insert({f, s, 0});
      } else {
        for (std::size_t h : spec.h_values) cells.insert({f, s, h});
      }
    }
  }
  return {cells.begin(), cells.end()};
}

Moments population_moments(std::span<const double> values) {
  if (values.empty()) throw ConfigError("population_moments: no values");
  // Deviations from the first value, so identical runs give sigma = 0 exactly.
  const double ref = values.front();
  const auto n = static_cast<double>(values.size());
  double shift = 0.0;
  for (double v : values) shift += v - ref;
  shift /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - ref - shift) * (v - ref - shift);
  Moments m;
  m.mean = ref + shift;
  m.std = std::sqrt(ss / n);
  return m;
}

std::optional<std::size_t> select_best(std::span<const RunScore> runs) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i].ok) continue;
    if (!best) {
      best = i;
      continue;
    }
    const RunScore& b = runs[*best];
    if (runs[i].train_r2 > b.train_r2 ||
        (runs[i].train_r2 == b.train_r2 && runs[i].seed < b.seed)) {
      best = i;
    }
  }
  return best;
}

void summarize(GridResult& cell) {
  std::vector<double> train, test;
  for (const RunScore& r : cell.runs) {
    if (!r.ok) continue;
    train.push_back(r.train_r2);
    test.push_back(r.test_r2);
  }
  cell.n_scored = train.size();
  const auto best = select_best(cell.runs);
  cell.scored = best.has_value();
  if (!cell.scored) {
    if (cell.ns_reason.empty()) {
      cell.ns_reason = cell.runs.empty() ? "no runs" : cell.runs.front().error;
    }
    cell.train = {};
    cell.test = {};
    cell.single_run = false;
    return;
  }
  cell.best_run = *best;
  cell.train = population_moments(train);
  cell.test = population_moments(test);
  cell.single_run = cell.n_scored == 1;
  if (cell.single_run) {
    cell.train.std = 0.0;
    cell.test.std = 0.0;
  }
}

data::WindowedDataset prepare_dataset(std::shared_ptr<const TimeSeries> series, std::size_t s,
                                      const GridSpec& spec) {
  data::WindowedDataset ds =
      data::chronological_split(data::make_windows(std::move(series), s), spec.fractions,
                                spec.split_rule);
  return spec.normalize ? data::normalize(ds) : ds;
}

std::vector<GridResult> run_grid(std::shared_ptr<const TimeSeries> series, const GridSpec& spec,
                                 const GridOptions& options) {
  spec.validate();
  if (!series) throw ConfigError("run_grid: no dataset");
  const std::vector<CellKey> cells = grid_cells(spec);
  std::vector<GridResult> results(cells.size());

  // Datasets are shared read-only by every cell with the same s.
  std::map<std::size_t, data::WindowedDataset> datasets;
  std::map<std::size_t, std::string> dataset_errors;
  for (std::size_t s : spec.s_values) {
    if (datasets.count(s) || dataset_errors.count(s)) continue;
    try {
      datasets.emplace(s, prepare_dataset(series, s, spec));
    } catch (const std::exception& e) {
      dataset_errors.emplace(s, e.what());
    }
  }

  struct Task {
    std::size_t cell;
    std::size_t run;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    results[c].key = cells[c];
    results[c].runs.resize(spec.n_runs);
    const auto err = dataset_errors.find(cells[c].s);
    if (err != dataset_errors.end()) {
      results[c].ns_reason = err->second;
      for (std::size_t r = 0; r < spec.n_runs; ++r) {
        results[c].runs[r].run = r;
        results[c].runs[r].seed = spec.train_for(cells[c].family).seed + r;
        results[c].runs[r].error = err->second;
      }
      continue;
    }
    for (std::size_t r = 0; r < spec.n_runs; ++r) tasks.push_back({c, r});
  }
  std::stable_sort(tasks.begin(), tasks.end(), [&](const Task& a, const Task& b) {
    return task_cost(cells[a.cell]) > task_cost(cells[b.cell]);
  });

  std::vector<std::vector<std::optional<models::Checkpoint>>> checkpoints(cells.size());
  for (auto& v : checkpoints) v.resize(spec.n_runs);

  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task task = tasks[t];
      const CellKey& key = cells[task.cell];
      RunScore& score = results[task.cell].runs[task.run];
      score.run = task.run;
      const train::TrainConfig& cfg = spec.train_for(key.family);
      score.seed = cfg.seed + task.run;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const models::ModelSpec mspec =
            models::make_spec(key.family, key.s, key.h, spec.gru_width, score.seed);
        train::RunRecord rec = train::run_single(mspec, datasets.at(key.s), cfg, task.run);
        score.ok = rec.ok;
        score.error = rec.error;
        score.train_r2 = rec.train_r2;
        score.test_r2 = rec.test_r2;
        score.epochs = rec.result.trace.size();
        score.best_epoch = rec.result.best_epoch;
        if (rec.ok && options.keep_checkpoints) {
          checkpoints[task.cell][task.run] = std::move(rec.result.checkpoint);
        }
      } catch (const std::exception& e) {
        score.ok = false;
        score.error = e.what();
      }
      score.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (options.on_run) {
        std::lock_guard<std::mutex> lock(report_mutex);
        options.on_run(key, score);
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  for (std::size_t c = 0; c < cells.size(); ++c) {
    summarize(results[c]);
    if (results[c].scored && options.keep_checkpoints) {
      results[c].best_checkpoint = std::move(checkpoints[c][results[c].best_run]);
    }
  }
  return results;
}

std::vector<GridResult> run_grid(const std::filesystem::path& dataset_path, const GridSpec& spec,
                                 const GridOptions& options) {
  auto series = std::make_shared<const TimeSeries>(data::load_csv(dataset_path));
  return run_grid(std::move(series), spec, options);
}

void write_grid_csv(const std::vector<GridResult>& results, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "family,s,h,run,seed,train_r2,test_r2,best_flag\n";
  for (const GridResult& cell : results) {
    for (std::size_t i = 0; i < cell.runs.size(); ++i) {
      const RunScore& r = cell.runs[i];
      out << models::family_name(cell.key.family) << ',' << cell.key.s << ',' << cell.key.h << ','
          << r.run << ',' << r.seed << ',';
      if (r.ok) {
        out << fmt(r.train_r2) << ',' << fmt(r.test_r2);
      } else {
        out << "NS,NS";
      }
      out << ',' << ((cell.scored && i == cell.best_run) ? 1 : 0) << '\n';
    }
  }
  finish(out, path);
}

std::vector<GridResult> read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "family,s,h,run,seed,train_r2,test_r2,best_flag") {
    throw IoError(path.string() + ": unexpected header");
  }
  std::map<CellKey, GridResult> cells;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 8) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      CellKey key{models::parse_family(f[0]), std::stoul(f[1]), std::stoul(f[2])};
      RunScore r;
      r.run = std::stoul(f[3]);
      r.seed = std::stoull(f[4]);
      r.ok = f[5] != "NS";
      if (r.ok) {
        r.train_r2 = std::stod(f[5]);
        r.test_r2 = std::stod(f[6]);
      } else {
        r.error = "NS";
      }
      GridResult& cell = cells[key];
      cell.key = key;
      cell.runs.push_back(r);
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<GridResult> out;
  for (auto& [key, cell] : cells) {
    summarize(cell);
    out.push_back(std::move(cell));
  }
  return out;
}

Curves aggregate_stats(const std::vector<GridResult>& results) {
  Curves curves;
  for (const GridResult& cell : results) {
    if (!cell.scored) continue;
    CurvePoint p;
    p.family = cell.key.family;
    p.train = cell.train;
    p.test = cell.test;
    p.n_scored = cell.n_scored;
    p.single_run = cell.single_run;
    p.fixed = cell.key.h;
    p.x = cell.key.s;
    curves.vs_s.push_back(p);
    p.fixed = cell.key.s;
    p.x = cell.key.h;
    curves.vs_h.push_back(p);
  }
  auto order = [](const CurvePoint& a, const CurvePoint& b) {
    return std::tie(a.family, a.fixed, a.x) < std::tie(b.family, b.fixed, b.x);
  };
  std::sort(curves.vs_s.begin(), curves.vs_s.end(), order);
  std::sort(curves.vs_h.begin(), curves.vs_h.end(), order);
  return curves;
}

void write_curves(const Curves& curves, const std::filesystem::path& dir) {
  auto write = [](const std::vector<CurvePoint>& pts, const std::filesystem::path& path,
                  const char* fixed, const char* axis) {
    std::ofstream out = open_out(path);
    out << "family," << fixed << ',' << axis
        << ",mu_train,sigma_train,mu_test,sigma_test,n_runs,single_run\n";
    for (const CurvePoint& p : pts) {
      out << models::family_name(p.family) << ',' << p.fixed << ',' << p.x << ','
          << fmt(p.train.mean) << ',' << fmt(p.train.std) << ',' << fmt(p.test.mean) << ','
          << fmt(p.test.std) << ',' << p.n_scored << ',' << (p.single_run ? 1 : 0) << '\n';
    }
    finish(out, path);
  };
  write(curves.vs_s, dir / "curves_vs_s.csv", "h", "s");
  write(curves.vs_h, dir / "curves_vs_h.csv", "s", "h");
  const nlohmann::json meta = {
      {"sigma", "population standard deviation over scored runs (divisor n)"},
      {"single_run", "sigma is reported as 0 when only one run was scored"},
      {"mu", "mean R^2 over scored runs"},
      {"excluded", "cells without any scored run (NS) are omitted"}};
  std::ofstream out = open_out(dir / "curves_metadata.json");
  out << meta.dump(2) << '\n';
  finish(out, dir / "curves_metadata.json");
}

ScatterData export_scatter(const models::Checkpoint& ckpt, std::shared_ptr<const TimeSeries> series,
                           data::Block block, const data::SplitFractions& fractions,
                           data::SplitRule rule) {
  const auto model = ckpt.instantiate();
  data::WindowedDataset ds =
      data::chronological_split(data::make_windows(std::move(series), ckpt.spec.s), fractions, rule);
  if (ckpt.normalized) ds = data::normalize_with(ds, ckpt.norm_stats);
  if (ds.window_length() != model->spec().s) {
    throw ConfigError("export_scatter: checkpoint window length does not match the dataset");
  }
  const std::size_t first = ds.block_begin(block);
  const std::size_t count = ds.block_size(block);
  ScatterData out;
  out.y_pred = train::predict_range(*model, ds, first, count);
  out.y_ref.resize(count);
  for (std::size_t k = 0; k < count; ++k) out.y_ref[k] = ds.raw_target(first + k);
  return out;
}

std::string scatter_filename(const models::ModelSpec& spec, data::Block block) {
  return std::string("scatter_") + models::family_name(spec.family) + "_" +
         std::to_string(spec.s) + "_" + std::to_string(spec.h) + "_" + data::block_name(block) +
         ".csv";
}

void write_scatter(const ScatterData& data, const models::ModelSpec& spec, data::Block block,
                   const std::filesystem::path& path) {
  if (data.y_ref.size() != data.y_pred.size()) throw ConfigError("write_scatter: length mismatch");
  std::ofstream out = open_out(path);
  out << "y_ref,y_pred\n";
  for (std::size_t i = 0; i < data.y_ref.size(); ++i) {
    out << fmt(data.y_ref[i]) << ',' << fmt(data.y_pred[i]) << '\n';
  }
  finish(out, path);

  double lo = 0.0, hi = 0.0;
  if (!data.y_ref.empty()) {
    lo = hi = data.y_ref.front();
    for (std::size_t i = 0; i < data.y_ref.size(); ++i) {
      lo = std::min({lo, data.y_ref[i], data.y_pred[i]});
      hi = std::max({hi, data.y_ref[i], data.y_pred[i]});
    }
  }
  nlohmann::json meta = {{"family", models::family_name(spec.family)},
                         {"s", spec.s},
                         {"h", spec.h},
                         {"split", data::block_name(block)},
                         {"rows", data.y_ref.size()},
                         {"identity_line", {{lo, lo}, {hi, hi}}}};
  try {
    meta["r2"] = r2_score(data.y_ref, data.y_pred);
  } catch (const ConfigError&) {
    meta["r2"] = nullptr;
  }
  const std::filesystem::path side = path.string() + ".json";
  std::ofstream m = open_out(side);
  m << meta.dump(2) << '\n';
  finish(m, side);
}

std::string format_summary(const std::vector<GridResult>& results) {
  std::set<std::size_t> s_values;
  for (const GridResult& c : results) s_values.insert(c.key.s);
  std::string text;
  char buf[64];
  for (models::Family fam : {models::Family::kLR, models::Family::kMLP, models::Family::kGRU}) {
    std::map<std::size_t, std::map<std::size_t, const GridResult*>> rows;  // h -> s -> cell
    for (const GridResult& c : results) {
      if (c.key.family == fam) rows[c.key.h][c.key.s] = &c;
    }
    if (rows.empty()) continue;
    text += std::string(models::family_name(fam)) + " (best-of-runs R^2, train / test)\n";
    std::snprintf(buf, sizeof buf, "%6s", "h\\s");
    text += buf;
    for (std::size_t s : s_values) {
      std::snprintf(buf, sizeof buf, " | %15zu", s);
      text += buf;
    }
    text += '\n';
    for (const auto& [h, by_s] : rows) {
      std::snprintf(buf, sizeof buf, "%6zu", h);
      text += buf;
      for (std::size_t s : s_values) {
        const auto it = by_s.find(s);
        if (it == by_s.end()) {
          std::snprintf(buf, sizeof buf, " | %15s", "-");
        } else if (!it->second->scored) {
          std::snprintf(buf, sizeof buf, " | %15s", "NS / NS");
        } else {
          const RunScore& r = it->second->runs[it->second->best_run];
          std::snprintf(buf, sizeof buf, " | %6.3f / %6.3f", r.train_r2, r.test_r2);
        }
        text += buf;
      }
      text += '\n';
    }
    text += '\n';
  }
  return text;
}

}  // namespace orthoplate::eval
