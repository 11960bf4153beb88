#include "drrff/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "drrff/error.hpp"

#ifndef DRRFF_VERSION
#define DRRFF_VERSION "unknown"
#endif

namespace drrff {
namespace {

using json = nlohmann::json;

void check_known_keys(const json& given, const json& reference, const std::string& path) {
  if (!given.is_object()) {
    if (reference.is_object()) throw ConfigError("config key '" + path + "' must be an object");
    return;
  }
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    if (reference.at(key).is_object()) check_known_keys(value, reference.at(key), here);
  }
}

std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json experiment_to_json(const ExperimentConfig& cfg) {
  json train = train_config_to_json(cfg.train);
  json loss = train.at("loss");
  train.erase("loss");
  return json{{"dataset", dataset_config_to_json(cfg.dataset)},
              {"model", model_config_to_json(cfg.model)},
              {"loss", loss},
              {"train", train},
              {"eval", {{"splits", cfg.eval_splits}}}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const json defaults = experiment_to_json(ExperimentConfig{});
  check_known_keys(j, defaults, "");
  json full = defaults;
  full.merge_patch(j);

  ExperimentConfig cfg;
  cfg.dataset = dataset_config_from_json(full.at("dataset"));
  try {
    cfg.model = model_config_from_json(full.at("model"));
    json train = full.at("train");
    train["loss"] = full.at("loss");
    cfg.train = train_config_from_json(train);
    cfg.eval_splits = full.at("eval").at("splits").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  cfg.train.validate();
  return cfg;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override '" + assignment + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    node = &next;
    start = dot + 1;
  }
}

ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides) {
  json j = json::object();
  if (file) {
    std::ifstream f(*file);
    if (!f) throw ConfigError("cannot read config file " + file->string());
    j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(j, o);
  return experiment_from_json(j);
}

std::string build_version() { return DRRFF_VERSION; }

json provenance(const std::string& command, std::uint64_t seed, const json& config) {
  return json{{"command", command},
              {"version", build_version()},
              {"seed", seed},
              {"config", config},
              {"created_utc", utc_timestamp()}};
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

void write_run_metadata(const std::filesystem::path& dir, const std::string& command, std::uint64_t seed,
                        const json& config) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "config.json", config);
  write_json_file(dir / "provenance.json", provenance(command, seed, config));
}

}  // namespace drrff
