#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoplate/dataio.hpp"
#include "orthoplate/evaluator.hpp"
#include "orthoplate/plate_sim.hpp"
#include "orthoplate/trainer.hpp"

namespace orthoplate::config {

struct DataConfig {
  // Empty means <output_dir>/dataset.csv.
  std::string dataset;
  data::SplitFractions split;
  data::SplitRule split_rule = data::SplitRule::kNestedHoldout;
  bool normalize = true;
  // Drop the quiet prefix before the first |u| > trim_threshold.
  bool trim = true;
  double trim_threshold = 0.0;
};

struct GridConfig {
  std::vector<models::Family> families{models::Family::kLR, models::Family::kMLP,
                                       models::Family::kGRU};
  std::vector<std::size_t> s_values{10, 50, 100, 200};
  std::vector<std::size_t> h_values{1, 2, 4, 6};
  std::size_t n_runs = 3;
};

/// Whole-pipeline configuration. Every section is optional in JSON; absent
/// keys keep the defaults below, unknown keys are rejected.
struct RunConfig {
  sim::PlateConfig plate;
  sim::ExcitationConfig excitation;
  DataConfig data;
  train::TrainConfig train;
  std::map<models::Family, train::TrainConfig> train_overrides;
  std::size_t gru_width = models::kDefaultGruWidth;
  GridConfig grid;
  std::string output_dir = "out";

  void validate() const;
  std::filesystem::path dataset_path() const;
  eval::GridSpec grid_spec() const;
  const train::TrainConfig& train_for(models::Family family) const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Parses and validates; throws ConfigError on unknown keys or bad values.
RunConfig from_json(const nlohmann::json& doc);

/// Applies "section.key=value" (any depth) to a JSON document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads the file (if any), applies overrides, parses and validates.
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Writes `<dir>/manifest_<command>.json` with the resolved config, the
/// command's extra fields and the SHA-256 of each artifact. Artifact paths
/// are resolved against the working directory and recorded relative to
/// dir. Contains nothing time-dependent.
std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::string& command,
                                     const RunConfig& cfg, const nlohmann::json& extra,
                                     const std::vector<std::filesystem::path>& artifacts);

}  // namespace orthoplate::config
