#include "orthoplate/checkpoint.hpp"

#include <fstream>

#include "orthoplate/error.hpp"

namespace orthoplate::models {

std::unique_ptr<Model> Checkpoint::instantiate() const {
  if (theta.size() != param_count(spec)) {
    throw ConfigError("checkpoint holds " + std::to_string(theta.size()) +
                      " parameters, architecture needs " + std::to_string(param_count(spec)));
  }
  return make_model(spec, theta);
}

void to_json(nlohmann::json& j, const Checkpoint& c) {
  j = nlohmann::json{{"format", "orthoplate-checkpoint"},
                     {"version", kCheckpointVersion},
                     {"spec", c.spec},
                     {"normalized", c.normalized},
                     {"norm_stats", c.norm_stats},
                     {"train_seed", c.train_seed},
                     {"theta", c.theta}};
}

void from_json(const nlohmann::json& j, Checkpoint& c) {
  if (j.value("format", "") != "orthoplate-checkpoint") {
    throw IoError("not an orthoplate checkpoint");
  }
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  c.spec = j.at("spec").get<ModelSpec>();
  c.normalized = j.at("normalized").get<bool>();
  c.norm_stats = j.at("norm_stats").get<data::NormStats>();
  c.train_seed = j.at("train_seed").get<std::uint64_t>();
  c.theta = j.at("theta").get<std::vector<double>>();
  if (c.theta.size() != param_count(c.spec)) {
    throw IoError("checkpoint parameter count does not match its architecture");
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << nlohmann::json(ckpt).dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  try {
    return j.get<Checkpoint>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace orthoplate::models
