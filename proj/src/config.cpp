#include "orthoplate/config.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

#include "orthoplate/error.hpp"

namespace orthoplate::config {

namespace {

const char* split_rule_name(data::SplitRule rule) {
  return rule == data::SplitRule::kFlat ? "flat" : "nested";
}

data::SplitRule parse_split_rule(const std::string& name) {
  if (name == "nested") return data::SplitRule::kNestedHoldout;
  if (name == "flat") return data::SplitRule::kFlat;
  throw ConfigError("data.split_rule must be \"nested\" or \"flat\"");
}

nlohmann::json data_to_json(const DataConfig& d) {
  return {{"dataset", d.dataset},
          {"split", {d.split.train, d.split.val, d.split.test}},
          {"split_rule", split_rule_name(d.split_rule)},
          {"normalize", d.normalize},
          {"trim", d.trim},
          {"trim_threshold", d.trim_threshold}};
}

void data_from_json(const nlohmann::json& j, DataConfig& d) {
  if (!j.is_object()) throw ConfigError("data: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset") d.dataset = value.get<std::string>();
    else if (key == "split") {
      const auto f = value.get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("data.split: expected [train, val, test]");
      d.split = {f[0], f[1], f[2]};
    }
    else if (key == "split_rule") d.split_rule = parse_split_rule(value.get<std::string>());
    else if (key == "normalize") d.normalize = value.get<bool>();
    else if (key == "trim") d.trim = value.get<bool>();
    else if (key == "trim_threshold") d.trim_threshold = value.get<double>();
    else throw ConfigError("data: unknown key '" + key + "'");
  }
}

std::vector<std::string> family_names(const std::vector<models::Family>& fams) {
  std::vector<std::string> out;
  for (models::Family f : fams) out.emplace_back(models::family_name(f));
  return out;
}

void grid_from_json(const nlohmann::json& j, GridConfig& g) {
  if (!j.is_object()) throw ConfigError("grid: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "families") {
      g.families.clear();
      for (const auto& f : value) g.families.push_back(models::parse_family(f.get<std::string>()));
    }
    else if (key == "s_values") g.s_values = value.get<std::vector<std::size_t>>();
    else if (key == "h_values") g.h_values = value.get<std::vector<std::size_t>>();
    else if (key == "n_runs") g.n_runs = value.get<std::size_t>();
    else throw ConfigError("grid: unknown key '" + key + "'");
  }
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

}  // namespace

void RunConfig::validate() const {
  plate.validate();
  excitation.validate();
  data::split_counts(1000000, data.split, data.split_rule);  // checks the fractions
  if (!(data.trim_threshold >= 0.0)) throw ConfigError("data.trim_threshold must be >= 0");
  train.validate();
  for (const auto& [family, cfg] : train_overrides) cfg.validate();
  if (gru_width < 1) throw ConfigError("model.gru_width must be >= 1");
  grid_spec().validate();
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::filesystem::path RunConfig::dataset_path() const {
  if (!data.dataset.empty()) return data.dataset;
  return std::filesystem::path(output_dir) / "dataset.csv";
}

eval::GridSpec RunConfig::grid_spec() const {
  eval::GridSpec spec;
  spec.families = grid.families;
  spec.s_values = grid.s_values;
  spec.h_values = grid.h_values;
  spec.n_runs = grid.n_runs;
  spec.gru_width = gru_width;
  spec.train = train;
  spec.train_overrides = train_overrides;
  spec.fractions = data.split;
  spec.split_rule = data.split_rule;
  spec.normalize = data.normalize;
  return spec;
}

const train::TrainConfig& RunConfig::train_for(models::Family family) const {
  const auto it = train_overrides.find(family);
  return it == train_overrides.end() ? train : it->second;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [family, tc] : cfg.train_overrides) overrides[models::family_name(family)] = tc;
  return {{"plate", cfg.plate},
          {"excitation", cfg.excitation},
          {"data", data_to_json(cfg.data)},
          {"train", cfg.train},
          {"train_overrides", overrides},
          {"model", {{"gru_width", cfg.gru_width}}},
          {"grid",
           {{"families", family_names(cfg.grid.families)},
            {"s_values", cfg.grid.s_values},
            {"h_values", cfg.grid.h_values},
            {"n_runs", cfg.grid.n_runs}}},
          {"output_dir", cfg.output_dir}};
}

RunConfig from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig cfg;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "plate") value.get_to(cfg.plate);
      else if (key == "excitation") value.get_to(cfg.excitation);
      else if (key == "data") data_from_json(value, cfg.data);
      else if (key == "train") train::from_json(value, cfg.train);
      else if (key == "train_overrides") continue;  // needs the final base section
      else if (key == "model") {
        for (const auto& [mk, mv] : value.items()) {
          if (mk == "gru_width") cfg.gru_width = mv.get<std::size_t>();
          else throw ConfigError("model: unknown key '" + mk + "'");
        }
      }
      else if (key == "grid") grid_from_json(value, cfg.grid);
      else if (key == "output_dir") cfg.output_dir = value.get<std::string>();
      else throw ConfigError("config: unknown section '" + key + "'");
    }
    // Overrides start from the resolved base train section.
    if (doc.contains("train_overrides")) {
      for (const auto& [fam, value] : doc.at("train_overrides").items()) {
        train::TrainConfig tc = cfg.train;
        train::from_json(value, tc);
        cfg.train_overrides[models::parse_family(fam)] = tc;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty key in '" + path + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("--set: '" + path + "' descends into a non-object");
      *node = nlohmann::json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + path.string() + ": " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  RunConfig cfg = from_json(doc);
  return cfg;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256: digest initialization failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::string& command,
                                     const RunConfig& cfg, const nlohmann::json& extra,
                                     const std::vector<std::filesystem::path>& artifacts) {
  nlohmann::json hashes = nlohmann::json::object();
  const std::filesystem::path base = std::filesystem::absolute(dir);
  for (const auto& a : artifacts) {
    const std::filesystem::path full = std::filesystem::absolute(a);
    hashes[std::filesystem::relative(full, base).generic_string()] = sha256_file(full);
  }
  const nlohmann::json manifest = {{"command", command},
                                   {"config", to_json(cfg)},
                                   {"result", extra},
                                   {"artifacts", hashes}};
  const std::filesystem::path path = dir / ("manifest_" + command + ".json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
  return path;
}

}  // namespace orthoplate::config
