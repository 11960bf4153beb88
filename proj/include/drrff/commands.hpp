#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace drrff {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct GenDataArgs {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::filesystem::path out;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::string method = "dr";
  std::filesystem::path data;  // gen-data output root
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;  // replaces train.seed
  bool verbose = true;
};

struct EvalArgs {
  std::filesystem::path ckpt;  // run directory, or model stem / model.bin
  std::filesystem::path data;  // split directory
  std::filesystem::path out;
};

struct VizArgs {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::filesystem::path out;  // files go to <out>/viz/
  std::size_t record_1 = 0;
  std::size_t record_2 = 1;
  std::uint64_t seed = 0;
  std::string channel = "real";
  std::string name;  // defaults to pair_<i>_<j>
};

struct SweepArgs {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::filesystem::path data;
  std::filesystem::path out;
  std::string param = "lambda";
  std::vector<double> values;
  int repeats = 3;
  std::string eval_split = "test_unknown_multipath";
  std::optional<std::uint64_t> seed;
};

struct CurvesArgs {
  std::vector<std::filesystem::path> histories;
  std::filesystem::path out;
};

// Each command writes config.json and provenance.json next to its outputs and
// throws on failure.
void cmd_gen_data(const GenDataArgs& a);
void cmd_train(const TrainArgs& a);
void cmd_eval(const EvalArgs& a);
void cmd_viz(const VizArgs& a);
void cmd_sweep(const SweepArgs& a);
void cmd_curves(const CurvesArgs& a);

// Runs fn and maps exceptions to exit codes: ConfigError -> 1, anything else -> 2.
// The message goes to stderr.
int run_command(const std::function<void()>& fn);

// Accepts a run directory, a checkpoint stem, or a path to its .bin / .json.
std::filesystem::path checkpoint_stem(const std::filesystem::path& p);

}  // namespace drrff
