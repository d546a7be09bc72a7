#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "orthoplate/dataio.hpp"
#include "orthoplate/models.hpp"

namespace orthoplate::models {

/// Everything needed to rebuild a trained surrogate: architecture, flat
/// parameters, and the normalization the model was trained under.
struct Checkpoint {
  ModelSpec spec;
  std::vector<double> theta;
  bool normalized = false;
  data::NormStats norm_stats;
  std::uint64_t train_seed = 0;

  std::unique_ptr<Model> instantiate() const;
};

inline constexpr int kCheckpointVersion = 1;

// JSON with "format": "orthoplate-checkpoint" and "version"; doubles are
// written with round-trip precision so reload is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const Checkpoint& c);
void from_json(const nlohmann::json& j, Checkpoint& c);

}  // namespace orthoplate::models
