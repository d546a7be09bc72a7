#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "orthoplate/error.hpp"
#include "orthoplate/evaluator.hpp"

using namespace orthoplate;
using namespace orthoplate::eval;
using models::Family;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "orthoplate_test_eval" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::shared_ptr<const TimeSeries> linear_series(std::size_t n, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto ts = std::make_shared<TimeSeries>();
  ts->dt = 1e-3;
  for (std::size_t k = 0; k < n; ++k) ts->u.push_back(nd(rng));
  ts->y.assign(n, 0.0);
  for (std::size_t k = 2; k < n; ++k) {
    ts->y[k] = 1.5 * ts->u[k] - 0.5 * ts->u[k - 1] + 0.25 * ts->u[k - 2] + 2.0 + noise * nd(rng);
  }
  return ts;
}

GridSpec small_grid() {
  GridSpec g;
  g.families = {Family::kLR, Family::kMLP};
  g.s_values = {3, 6};
  g.h_values = {1};
  g.n_runs = 2;
  g.train.max_epochs = 4;
  g.train.patience = 2;
  g.train.seed = 5;
  return g;
}

RunScore score(std::size_t run, std::uint64_t seed, double train_r2, double test_r2, bool ok = true) {
  RunScore r;
  r.run = run;
  r.seed = seed;
  r.train_r2 = train_r2;
  r.test_r2 = test_r2;
  r.ok = ok;
  return r;
}

}  // namespace

TEST(R2Score, Examples) {
  const std::vector<double> y{1.0, 2.0, 3.0};
  EXPECT_EQ(r2_score(y, y), 1.0);
  const std::vector<double> mean(3, 2.0);
  EXPECT_NEAR(r2_score(y, mean), 0.0, 1e-12);
  EXPECT_NEAR(r2_score(y, std::vector<double>{1.0, 2.0, 4.0}), 0.5, 1e-12);
  EXPECT_LT(r2_score(y, std::vector<double>{3.0, 2.0, 1.0}), 0.0);
}

TEST(R2Score, Errors) {
  EXPECT_THROW(r2_score(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0}), ConfigError);
  EXPECT_THROW(r2_score(std::vector<double>{1.0}, std::vector<double>{1.0}), ConfigError);
  EXPECT_THROW(r2_score(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), ConfigError);
}

TEST(R2Score, AffineInvarianceAndStrictness) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> y(500), p(500);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = nd(rng);
    p[i] = 0.8 * y[i] + 0.3 * nd(rng);
  }
  const double base = r2_score(y, p);
  for (const auto& [a, b] : {std::pair{2.5, -1.0}, std::pair{1e-3, 40.0}, std::pair{-3.0, 0.5}}) {
    std::vector<double> ya(y.size()), pa(p.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      ya[i] = a * y[i] + b;
      pa[i] = a * p[i] + b;
    }
    EXPECT_NEAR(r2_score(ya, pa), base, 1e-12);
  }
  std::vector<double> q = y;
  q[17] += 1e-6;
  EXPECT_LT(r2_score(y, q), 1.0);
}

TEST(Moments, PopulationFormula) {
  const Moments m = population_moments(std::vector<double>{0.8, 1.0});
  EXPECT_NEAR(m.mean, 0.9, 1e-15);
  EXPECT_NEAR(m.std, 0.1, 1e-15);
  const Moments same = population_moments(std::vector<double>{0.7, 0.7, 0.7});
  EXPECT_EQ(same.std, 0.0);
  EXPECT_THROW(population_moments(std::vector<double>{}), ConfigError);
}

TEST(SelectBest, ArgmaxOfTrainingScoreOnly) {
  std::vector<RunScore> runs{score(0, 10, 0.5, 0.99), score(1, 11, 0.9, 0.1), score(2, 12, 0.7, 0.8)};
  EXPECT_EQ(select_best(runs), 1u);
  // Ties go to the lowest seed regardless of position.
  runs = {score(0, 12, 0.9, 0.0), score(1, 10, 0.9, 0.5), score(2, 11, 0.9, 1.0)};
  EXPECT_EQ(select_best(runs), 1u);
  runs = {score(0, 1, 0.99, 0.9, false), score(1, 2, 0.3, 0.2)};
  EXPECT_EQ(select_best(runs), 1u);
  runs = {score(0, 1, 0.0, 0.0, false)};
  EXPECT_FALSE(select_best(runs).has_value());
}

TEST(Summarize, FlagsSingleRunAndNs) {
  GridResult cell;
  cell.runs = {score(0, 1, 0.8, 0.7), score(1, 2, 0.0, 0.0, false)};
  summarize(cell);
  EXPECT_TRUE(cell.scored);
  EXPECT_TRUE(cell.single_run);
  EXPECT_EQ(cell.test.std, 0.0);
  EXPECT_EQ(cell.n_scored, 1u);
  cell.runs = {score(0, 1, 0.0, 0.0, false)};
  cell.runs[0].error = "diverged";
  summarize(cell);
  EXPECT_FALSE(cell.scored);
  EXPECT_EQ(cell.ns_reason, "diverged");
}

TEST(GridCells, DefaultShapeHas36Cells) {
  const std::vector<CellKey> cells = grid_cells(GridSpec{});
  EXPECT_EQ(cells.size(), 36u);
  std::size_t lr = 0, mlp = 0, gru = 0;
  for (const CellKey& c : cells) {
    if (c.family == Family::kLR) {
      ++lr;
      EXPECT_EQ(c.h, 0u);
    }
    mlp += c.family == Family::kMLP;
    gru += c.family == Family::kGRU;
  }
  EXPECT_EQ(lr, 4u);
  EXPECT_EQ(mlp, 16u);
  EXPECT_EQ(gru, 16u);
  EXPECT_TRUE(std::is_sorted(cells.begin(), cells.end()));
}

TEST(GridSpec, RejectsEmptyLists) {
  GridSpec g;
  g.s_values.clear();
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.families.clear();
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.n_runs = 0;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(RunGrid, LinearDataScoresNearOne) {
  GridSpec g;
  g.families = {Family::kLR};
  g.s_values = {3};
  g.n_runs = 1;
  g.train.max_epochs = 200;
  g.train.patience = 20;
  g.train.lr = 1e-2;
  const auto results = run_grid(linear_series(4000, 0.01, 1), g);
  ASSERT_EQ(results.size(), 1u);
  ASSERT_TRUE(results[0].scored) << results[0].ns_reason;
  EXPECT_GT(results[0].runs[0].test_r2, 0.99);
  ASSERT_TRUE(results[0].best_checkpoint.has_value());
}

TEST(RunGrid, FailedCellIsNsAndOthersUnaffected) {
  GridSpec g = small_grid();
  g.s_values = {3, 5000};
  const auto results = run_grid(linear_series(1000, 0.1, 2), g);
  ASSERT_EQ(results.size(), 4u);
  for (const GridResult& r : results) {
    if (r.key.s == 5000) {
      EXPECT_FALSE(r.scored);
      EXPECT_FALSE(r.ns_reason.empty());
    } else {
      EXPECT_TRUE(r.scored) << r.ns_reason;
    }
  }
  const fs::path dir = scratch_dir("ns");
  write_grid_csv(results, dir / "grid_results.csv");
  const std::string csv = slurp(dir / "grid_results.csv");
  EXPECT_NE(csv.find("LR,5000,0,0,5,NS,NS,0"), std::string::npos);
  EXPECT_NE(format_summary(results).find("NS / NS"), std::string::npos);
}

TEST(RunGrid, DeterministicAcrossRunsAndJobCounts) {
  const auto series = linear_series(1500, 0.2, 3);
  const GridSpec g = small_grid();
  const fs::path dir = scratch_dir("det");
  GridOptions one;
  GridOptions three;
  three.jobs = 3;
  write_grid_csv(run_grid(series, g, one), dir / "a.csv");
  write_grid_csv(run_grid(series, g, one), dir / "b.csv");
  write_grid_csv(run_grid(series, g, three), dir / "c.csv");
  const std::string a = slurp(dir / "a.csv");
  EXPECT_EQ(a, slurp(dir / "b.csv"));
  EXPECT_EQ(a, slurp(dir / "c.csv"));
}

TEST(RunGrid, CsvRoundTripKeepsBestFlags) {
  const auto results = run_grid(linear_series(1500, 0.2, 4), small_grid());
  const fs::path dir = scratch_dir("roundtrip");
  write_grid_csv(results, dir / "grid_results.csv");
  const auto back = read_grid_csv(dir / "grid_results.csv");
  ASSERT_EQ(back.size(), results.size());
  for (std::size_t c = 0; c < back.size(); ++c) {
    EXPECT_EQ(back[c].key, results[c].key);
    EXPECT_EQ(back[c].best_run, results[c].best_run);
    for (std::size_t r = 0; r < back[c].runs.size(); ++r) {
      EXPECT_EQ(back[c].runs[r].train_r2, results[c].runs[r].train_r2);
      EXPECT_EQ(back[c].runs[r].seed, results[c].runs[r].seed);
    }
  }
  // Every cell's flagged run is the argmax of training R^2.
  for (const GridResult& cell : back) {
    for (const RunScore& r : cell.runs) {
      EXPECT_LE(r.train_r2, cell.runs[cell.best_run].train_r2);
    }
  }
}

TEST(Curves, ArrangementAndFiles) {
  std::vector<GridResult> results(3);
  results[0].key = {Family::kMLP, 10, 1};
  results[1].key = {Family::kMLP, 50, 1};
  results[2].key = {Family::kMLP, 10, 2};
  results[0].runs = {score(0, 0, 0.8, 0.8), score(1, 1, 1.0, 1.0)};
  results[1].runs = {score(0, 0, 0.9, 0.9), score(1, 1, 0.9, 0.9)};
  results[2].runs = {score(0, 0, 0.5, 0.4)};
  for (auto& r : results) summarize(r);
  const Curves c = aggregate_stats(results);
  ASSERT_EQ(c.vs_s.size(), 3u);
  EXPECT_EQ(c.vs_s[0].fixed, 1u);
  EXPECT_EQ(c.vs_s[0].x, 10u);
  EXPECT_NEAR(c.vs_s[0].test.mean, 0.9, 1e-15);
  EXPECT_NEAR(c.vs_s[0].test.std, 0.1, 1e-15);
  EXPECT_EQ(c.vs_s[1].test.std, 0.0);
  EXPECT_TRUE(c.vs_s[2].single_run);
  EXPECT_EQ(c.vs_h[0].fixed, 10u);
  EXPECT_EQ(c.vs_h[1].x, 2u);
  const fs::path dir = scratch_dir("curves");
  write_curves(c, dir);
  EXPECT_EQ(slurp(dir / "curves_vs_s.csv").substr(0, 14), "family,h,s,mu_");
  EXPECT_EQ(slurp(dir / "curves_vs_h.csv").substr(0, 14), "family,s,h,mu_");
  const auto meta = nlohmann::json::parse(slurp(dir / "curves_metadata.json"));
  EXPECT_NE(meta["sigma"].get<std::string>().find("population"), std::string::npos);
}

TEST(Scatter, PerfectAndConstantModels) {
  auto ts = std::make_shared<TimeSeries>(*linear_series(500, 0.0, 5));
  for (std::size_t k = 0; k < ts->size(); ++k) ts->y[k] = ts->u[k];
  models::Checkpoint ck;
  ck.spec = models::make_spec(Family::kLR, 3, 0);
  ck.theta = {1.0, 0.0, 0.0, 0.0};
  ScatterData sd = export_scatter(ck, ts, data::Block::kTest);
  const auto ds = data::chronological_split(data::make_windows(ts, 3), {});
  ASSERT_EQ(sd.y_ref.size(), ds.block_size(data::Block::kTest));
  for (std::size_t i = 0; i < sd.y_ref.size(); ++i) EXPECT_EQ(sd.y_ref[i], sd.y_pred[i]);

  ck.theta = {0.0, 0.0, 0.0, -2.5};
  sd = export_scatter(ck, ts, data::Block::kVal);
  EXPECT_EQ(sd.y_pred.size(), ds.block_size(data::Block::kVal));
  for (double p : sd.y_pred) EXPECT_EQ(p, -2.5);

  EXPECT_EQ(scatter_filename(ck.spec, data::Block::kVal), "scatter_LR_3_0_val.csv");
  const fs::path dir = scratch_dir("scatter");
  write_scatter(sd, ck.spec, data::Block::kVal, dir / "s.csv");
  const auto meta = nlohmann::json::parse(slurp(dir / "s.csv.json"));
  EXPECT_EQ(meta["rows"].get<std::size_t>(), sd.y_ref.size());
  EXPECT_EQ(meta["identity_line"].size(), 2u);
  ck.spec = models::make_spec(Family::kLR, 600, 0);
  ck.theta.assign(601, 0.0);
  EXPECT_THROW(export_scatter(ck, ts, data::Block::kTest), ConfigError);
}
