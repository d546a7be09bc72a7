// orthoplate command-line driver: simulate, train, grid, scatter, report.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orthoplate/checkpoint.hpp"
#include "orthoplate/config.hpp"
#include "orthoplate/dataio.hpp"
#include "orthoplate/error.hpp"
#include "orthoplate/evaluator.hpp"
#include "orthoplate/plate_sim.hpp"
#include "orthoplate/trainer.hpp"

namespace fs = std::filesystem;
using namespace orthoplate;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::shared_ptr<const TimeSeries> load_series(const config::RunConfig& cfg) {
  TimeSeries series = data::load_csv(cfg.dataset_path());
  if (cfg.data.trim) series = data::trim_prefix(series, cfg.data.trim_threshold);
  return std::make_shared<const TimeSeries>(std::move(series));
}

std::string cell_tag(models::Family f, std::size_t s, std::size_t h) {
  return std::string(models::family_name(f)) + "_" + std::to_string(s) + "_" + std::to_string(h);
}

int cmd_simulate(const config::RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const sim::GeneratedDataset gen = sim::generate_dataset(cfg.plate, cfg.excitation);
  const fs::path csv = cfg.data.dataset.empty() ? dir / "dataset.csv" : fs::path(cfg.data.dataset);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  write_csv(gen.series, csv);

  const nlohmann::json extra = {
      {"rows", gen.series.size()},
      {"modes", gen.system.num_modes},
      {"rigid_modes", gen.system.rigid_count},
      {"eigenvalues", gen.system.lambdas},
      {"symmetry_residual", gen.system.symmetry_residual},
      {"pulse_amplitude", gen.amplitude},
      {"linear_output_std", gen.linear_std},
      {"nonlinearity",
       {{"kind", sim::nonlinearity_name(gen.nonlinearity.kind)},
        {"scale", gen.nonlinearity.scale},
        {"eps", gen.nonlinearity.eps}}}};
  config::write_manifest(dir, "simulate", cfg, extra, {fs::absolute(csv)});
  std::printf("simulated %zu samples (%zu modes, %zu rigid) -> %s\n", gen.series.size(),
              gen.system.num_modes, gen.system.rigid_count, csv.string().c_str());
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const std::string& family_name, std::size_t s,
              std::size_t h) {
  const models::Family family = models::parse_family(family_name);
  const models::ModelSpec spec =
      models::make_spec(family, s, family == models::Family::kLR ? 0 : h, cfg.gru_width);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const auto series = load_series(cfg);
  const data::WindowedDataset ds = eval::prepare_dataset(series, s, cfg.grid_spec());

  train::TrainConfig tc = cfg.train_for(family);
  models::ModelSpec run_spec = spec;
  run_spec.seed = tc.seed;
  train::TrainResult result;
  try {
    result = train::train(run_spec, ds, tc);
  } catch (const train::DivergenceError& e) {
    const std::string tag = cell_tag(family, s, spec.h);
    train::write_trace_csv(e.trace(), dir / ("trace_" + tag + ".csv"));
    throw;
  }
  const auto model = result.checkpoint.instantiate();
  const double train_r2 = train::block_r2(*model, ds, data::Block::kTrain);
  const double test_r2 = train::block_r2(*model, ds, data::Block::kTest);

  const std::string tag = cell_tag(family, s, spec.h);
  const fs::path ckpt = dir / ("checkpoint_" + tag + ".json");
  const fs::path trace = dir / ("trace_" + tag + ".csv");
  const fs::path scatter = dir / eval::scatter_filename(spec, data::Block::kTest);
  models::save_checkpoint(result.checkpoint, ckpt);
  train::write_trace_csv(result.trace, trace);
  eval::write_scatter(eval::export_scatter(result.checkpoint, series, data::Block::kTest,
                                           cfg.data.split, cfg.data.split_rule),
                      spec, data::Block::kTest, scatter);
  const nlohmann::json extra = {{"dataset_sha256", config::sha256_file(cfg.dataset_path())},
                                {"family", models::family_name(family)},
                                {"s", s},
                                {"h", spec.h},
                                {"seed", tc.seed},
                                {"epochs", result.trace.size()},
                                {"best_epoch", result.best_epoch},
                                {"best_val_loss", result.best_val_loss},
                                {"train_r2", train_r2},
                                {"test_r2", test_r2}};
  config::write_manifest(dir, "train_" + tag, cfg, extra,
                         {ckpt, trace, scatter, fs::path(scatter.string() + ".json")});
  std::printf("%s s=%zu h=%zu: %zu epochs (best %zu), train R^2 %.4f, test R^2 %.4f\n",
              models::family_name(family), s, spec.h, result.trace.size(), result.best_epoch,
              train_r2, test_r2);
  return 0;
}

int cmd_grid(const config::RunConfig& cfg, std::size_t jobs) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir / "checkpoints");
  const auto series = load_series(cfg);
  eval::GridOptions opts;
  opts.jobs = jobs;
  opts.on_run = [](const eval::CellKey& k, const eval::RunScore& r) {
    if (r.ok) {
      std::fprintf(stderr, "  %s s=%zu h=%zu run %zu: train %.4f test %.4f (%zu epochs, %.1f s)\n",
                   models::family_name(k.family), k.s, k.h, r.run, r.train_r2, r.test_r2,
                   r.epochs, r.seconds);
    } else {
      std::fprintf(stderr, "  %s s=%zu h=%zu run %zu: NS (%s)\n", models::family_name(k.family),
                   k.s, k.h, r.run, r.error.c_str());
    }
  };
  const std::vector<eval::GridResult> results = eval::run_grid(series, cfg.grid_spec(), opts);

  std::vector<fs::path> artifacts{dir / "grid_results.csv", dir / "curves_vs_s.csv",
                                  dir / "curves_vs_h.csv", dir / "curves_metadata.json",
                                  dir / "grid_summary.txt"};
  eval::write_grid_csv(results, artifacts[0]);
  eval::write_curves(eval::aggregate_stats(results), dir);
  const std::string summary = eval::format_summary(results);
  {
    std::ofstream out(artifacts[4]);
    out << summary;
    if (!out) throw IoError("failed writing " + artifacts[4].string());
  }
  std::size_t scored = 0;
  nlohmann::json ns = nlohmann::json::array();
  for (const eval::GridResult& cell : results) {
    if (!cell.scored) {
      ns.push_back({{"cell", cell_tag(cell.key.family, cell.key.s, cell.key.h)},
                    {"reason", cell.ns_reason}});
      continue;
    }
    ++scored;
    const fs::path ck =
        dir / "checkpoints" / ("best_" + cell_tag(cell.key.family, cell.key.s, cell.key.h) + ".json");
    models::save_checkpoint(*cell.best_checkpoint, ck);
    artifacts.push_back(ck);
  }
  config::write_manifest(dir, "grid", cfg,
                         {{"dataset_sha256", config::sha256_file(cfg.dataset_path())},
                          {"cells", results.size()},
                          {"scored_cells", scored},
                          {"ns_cells", ns}},
                         artifacts);
  std::cout << summary;
  std::printf("%zu of %zu cells scored; results in %s\n", scored, results.size(),
              (dir / "grid_results.csv").string().c_str());
  return scored == 0 ? kExitRuntime : 0;
}

int cmd_scatter(const config::RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& split) {
  const data::Block block = data::parse_block(split);
  const models::Checkpoint ckpt = models::load_checkpoint(checkpoint_path);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const eval::ScatterData sd = eval::export_scatter(ckpt, load_series(cfg), block, cfg.data.split,
                                                    cfg.data.split_rule);
  const fs::path out = dir / eval::scatter_filename(ckpt.spec, block);
  eval::write_scatter(sd, ckpt.spec, block, out);
  const double r2 = eval::r2_score(sd.y_ref, sd.y_pred);
  config::write_manifest(dir, "scatter", cfg,
                         {{"checkpoint", checkpoint_path}, {"split", split}, {"r2", r2}},
                         {out, fs::path(out.string() + ".json")});
  std::printf("%zu rows, R^2 %.4f -> %s\n", sd.y_ref.size(), r2, out.string().c_str());
  return 0;
}

int cmd_report(const config::RunConfig& cfg, const std::string& grid_csv) {
  const fs::path dir = cfg.output_dir;
  const fs::path src = grid_csv.empty() ? dir / "grid_results.csv" : fs::path(grid_csv);
  const std::vector<eval::GridResult> results = eval::read_grid_csv(src);
  fs::create_directories(dir);
  eval::write_curves(eval::aggregate_stats(results), dir);
  std::cout << eval::format_summary(results);
  config::write_manifest(dir, "report", cfg, {{"source", src.generic_string()}},
                         {dir / "curves_vs_s.csv", dir / "curves_vs_h.csv",
                          dir / "curves_metadata.json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthotropic plate surrogate benchmark"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> sets;
  std::size_t jobs = 1;
  app.add_option("-c,--config", config_path, "JSON run configuration");
  app.add_option("--set", sets, "Override a config entry, section.key=value (repeatable)");
  app.add_option("-j,--jobs", jobs, "Worker threads for grid runs")->check(CLI::PositiveNumber);

  auto* simulate = app.add_subcommand("simulate", "Simulate the plate and write dataset.csv");
  auto* train = app.add_subcommand("train", "Train one model with trace and test scatter");
  std::string family;
  std::size_t s = 0;
  std::size_t h = 0;
  train->add_option("--family", family, "LR, MLP or GRU")->required();
  train->add_option("--s", s, "Window length")->required()->check(CLI::PositiveNumber);
  train->add_option("--h", h, "Hidden layers (ignored for LR)");
  auto* grid = app.add_subcommand("grid", "Run the (family, s, h) grid");
  auto* scatter = app.add_subcommand("scatter", "Export reference vs predicted outputs");
  std::string checkpoint;
  std::string split = "test";
  scatter->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  scatter->add_option("--split", split, "train, val or test");
  auto* report = app.add_subcommand("report", "Rebuild curves and summary from grid_results.csv");
  std::string grid_csv;
  report->add_option("--grid", grid_csv, "grid_results.csv (default: <output_dir>/grid_results.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const config::RunConfig cfg = config::load(config_path, sets);
    if (*simulate) return cmd_simulate(cfg);
    if (*train) return cmd_train(cfg, family, s, h);
    if (*grid) return cmd_grid(cfg, jobs);
    if (*scatter) return cmd_scatter(cfg, checkpoint, split);
    if (*report) return cmd_report(cfg, grid_csv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
