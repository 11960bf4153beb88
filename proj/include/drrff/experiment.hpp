#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/dataset.hpp"
#include "drrff/models.hpp"
#include "drrff/training.hpp"

namespace drrff {

// Everything one experiment needs. On disk it is a JSON object with the
// sections dataset, model, loss, train and eval; loss is kept in train.loss
// in memory.
struct ExperimentConfig {
  DatasetConfig dataset = DatasetConfig::desk_default();
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  // Splits scored after each epoch when train.eval_every > 0.
  std::vector<std::string> eval_splits{"val", "test_unknown_multipath"};
};

nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
// Fills missing keys from the defaults. Keys the defaults do not have are a
// ConfigError (arrays such as splits are taken as given).
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Applies "section.key=value" (dots descend into objects). The value is read
// as JSON when it parses, otherwise as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Defaults, then the file (if any), then the overrides in order.
ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides);

// Version of this build, in the style of `git describe`.
std::string build_version();

// {command, version, seed, config, created_utc}. created_utc follows
// SOURCE_DATE_EPOCH when set, so provenance can be made reproducible too.
nlohmann::json provenance(const std::string& command, std::uint64_t seed, const nlohmann::json& config);

// Writes <dir>/config.json and <dir>/provenance.json.
void write_run_metadata(const std::filesystem::path& dir, const std::string& command, std::uint64_t seed,
                        const nlohmann::json& config);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace drrff
