#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "orthoplate/config.hpp"
#include "orthoplate/error.hpp"

using namespace orthoplate;
using namespace orthoplate::config;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "orthoplate_test_config" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(RunConfig, DefaultsAreDeskScale) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_DOUBLE_EQ(cfg.plate.dt, 1.0 / 3000.0);
  EXPECT_DOUBLE_EQ(cfg.excitation.duration, 60.0);
  EXPECT_EQ(cfg.train.batch_size, 256u);
  EXPECT_EQ(cfg.grid.n_runs, 3u);
  EXPECT_EQ(cfg.dataset_path(), fs::path("out") / "dataset.csv");
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig cfg;
  cfg.plate.alpha = 12.5;
  cfg.excitation.amplitude = 0.3;
  cfg.data.split_rule = data::SplitRule::kFlat;
  cfg.train.lr = 5e-4;
  cfg.train_overrides[models::Family::kGRU].max_epochs = 7;
  cfg.grid.s_values = {10, 20};
  cfg.gru_width = 8;
  cfg.output_dir = "elsewhere";
  const RunConfig back = from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(back.train_for(models::Family::kGRU).max_epochs, 7u);
  // A full override object keeps its own fields.
  EXPECT_EQ(back.train_for(models::Family::kGRU).lr, 1e-3);
  EXPECT_EQ(back.train_for(models::Family::kMLP).max_epochs, 500u);
}

TEST(RunConfig, PartialOverridesLayerOnBaseSection) {
  const nlohmann::json doc = {{"train", {{"lr", 0.01}, {"patience", 7}}},
                              {"train_overrides", {{"MLP", {{"max_epochs", 30}}}}}};
  const RunConfig cfg = from_json(doc);
  const auto& mlp = cfg.train_for(models::Family::kMLP);
  EXPECT_EQ(mlp.max_epochs, 30u);
  EXPECT_EQ(mlp.lr, 0.01);
  EXPECT_EQ(mlp.patience, 7u);
  const eval::GridSpec g = cfg.grid_spec();
  EXPECT_EQ(g.train_for(models::Family::kMLP).max_epochs, 30u);
  EXPECT_EQ(g.train_for(models::Family::kLR).max_epochs, 500u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(from_json(nlohmann::json{{"plates", {}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"train", {{"batch", 3}}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"data", {{"split_rule", "random"}}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"grid", {{"s_values", nlohmann::json::array()}}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"excitation", {{"duration", 0}}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"plate", {{"nu1", 2.5}}}}), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"train", {{"lr", "fast"}}}}), ConfigError);
}

TEST(Overrides, DottedAssignment) {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "train.lr=0.002");
  apply_override(doc, "grid.s_values=[10,50]");
  apply_override(doc, "output_dir=runs/a");
  apply_override(doc, "grid.families=[\"LR\"]");
  EXPECT_EQ(doc["train"]["lr"].get<double>(), 0.002);
  EXPECT_EQ(doc["grid"]["s_values"].size(), 2u);
  EXPECT_EQ(doc["output_dir"].get<std::string>(), "runs/a");
  const RunConfig cfg = from_json(doc);
  EXPECT_EQ(cfg.grid.families.size(), 1u);
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(doc, "output_dir.x=1"), ConfigError);
}

TEST(Load, FileThenOverrides) {
  const fs::path dir = scratch_dir("load");
  std::ofstream(dir / "c.json") << R"({"train": {"lr": 0.01}, "output_dir": "x"})";
  const RunConfig cfg = load(dir / "c.json", {"train.lr=0.02"});
  EXPECT_EQ(cfg.train.lr, 0.02);
  EXPECT_EQ(cfg.output_dir, "x");
  EXPECT_THROW(load(dir / "missing.json", {}), IoError);
  std::ofstream(dir / "bad.json") << "{ broken";
  EXPECT_THROW(load(dir / "bad.json", {}), ConfigError);
  // No file: defaults plus overrides.
  EXPECT_EQ(load("", {"grid.n_runs=1"}).grid.n_runs, 1u);
}

TEST(Sha256, KnownDigests) {
  const fs::path dir = scratch_dir("sha");
  std::ofstream(dir / "empty.bin").close();
  std::ofstream(dir / "abc.bin") << "abc";
  EXPECT_EQ(sha256_file(dir / "empty.bin"),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_file(dir / "abc.bin"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, EqualInputsGiveEqualBytes) {
  const fs::path dir = scratch_dir("manifest");
  std::ofstream(dir / "artifact.csv") << "a,b\n1,2\n";
  const RunConfig cfg;
  const fs::path m1 = write_manifest(dir, "demo", cfg, {{"rows", 1}}, {dir / "artifact.csv"});
  std::ifstream in1(m1);
  const std::string first((std::istreambuf_iterator<char>(in1)), {});
  write_manifest(dir, "demo", cfg, {{"rows", 1}}, {dir / "artifact.csv"});
  std::ifstream in2(m1);
  const std::string second((std::istreambuf_iterator<char>(in2)), {});
  EXPECT_EQ(first, second);
  const auto doc = nlohmann::json::parse(first);
  EXPECT_EQ(doc["command"], "demo");
  EXPECT_EQ(doc["artifacts"]["artifact.csv"], sha256_file(dir / "artifact.csv"));
  EXPECT_EQ(doc["config"], to_json(cfg));
}
