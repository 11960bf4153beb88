#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

#include "drrff/models.hpp"

using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the command-line tool with stdout and stderr captured together.
Result cli(const std::string& args, const testing::TempDir& dir) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string(DRRFF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, testing::read_bytes(log)};
}

// Two known devices, two unknown ones, a handful of records and a narrow model.
std::string write_tiny_config(const testing::TempDir& dir) {
  const json channel = {{"kind", "awgn"}, {"flat_gain_jitter", true}, {"tag", "los"}};
  const json cfg = {
      {"dataset",
       {{"num_devices", 2},
        {"num_unknown_devices", 2},
        {"splits",
         {{{"name", "train"}, {"devices", "known"}, {"per_device", 6}, {"channel", channel}},
          {{"name", "val"}, {"devices", "known"}, {"per_device", 3}, {"channel", channel}},
          {{"name", "test_unknown_multipath"},
           {"devices", "unknown"},
           {"per_device", 3},
           {"channel", {{"kind", "multipath_fir"}, {"num_taps", 5}, {"tag", "fir5"}}}}}}}},
      {"model", drrff::model_config_to_json(testing::small_model_config(2))},
      {"train", {{"epochs", 2}, {"batch_size", 4}}}};
  const auto path = dir / "tiny.json";
  std::ofstream(path) << cfg.dump(2);
  return path.string();
}

}  // namespace

TEST_CASE("help lists every subcommand and its flags") {
  testing::TempDir dir("cli_help");
  const Result top = cli("--help", dir);
  CHECK(top.code == 0);
  for (const char* sub : {"gen-data", "train", "eval", "viz", "sweep", "curves"}) CHECK(top.out.find(sub) != std::string::npos);
  const Result train = cli("train --help", dir);
  CHECK(train.code == 0);
  for (const char* flag : {"--method", "--data", "--out", "--seed", "--config"}) CHECK(train.out.find(flag) != std::string::npos);
  CHECK(cli("--version", dir).code == 0);
}

TEST_CASE("usage errors exit with 1") {
  testing::TempDir dir("cli_usage");
  CHECK(cli("", dir).code == 1);
  CHECK(cli("train --bogus", dir).code == 1);
  CHECK(cli("train --method sgd --data x --out y", dir).code == 1);
  CHECK(cli("gen-data --out " + (dir / "d").string() + " --set dataset.num_devices=-3", dir).code == 1);
}

TEST_CASE("runtime failures exit with 2") {
  testing::TempDir dir("cli_runtime");
  const Result r = cli("eval --ckpt " + (dir / "missing").string() + " --data " + (dir / "nothing").string() +
                           " --out " + (dir / "o").string(),
                       dir);
  CHECK(r.code == 2);
  CHECK_FALSE(r.out.empty());
}

TEST_CASE("the pipeline runs end to end and is reproducible") {
  testing::TempDir dir("cli_pipeline");
  const std::string cfg = write_tiny_config(dir);
  const std::string root = dir.path().string();
  REQUIRE(cli("gen-data --config " + cfg + " --seed 3 --out " + root + "/data", dir).code == 0);
  CHECK(std::filesystem::exists(dir / "data/train/train.iq"));
  CHECK(std::filesystem::exists(dir / "data/provenance.json"));

  for (const char* run : {"a", "b"}) {
    REQUIRE(cli("train --quiet --config " + cfg + " --seed 4 --data " + root + "/data --out " + root + "/" + run, dir)
                .code == 0);
    REQUIRE(cli(std::string("eval --ckpt ") + root + "/" + run + " --data " + root +
                    "/data/test_unknown_multipath --out " + root + "/ev_" + run,
                dir)
                .code == 0);
  }
  const std::string metrics = testing::read_bytes(dir / "ev_a/metrics.json");
  CHECK_FALSE(metrics.empty());
  CHECK(metrics == testing::read_bytes(dir / "ev_b/metrics.json"));
  CHECK(testing::read_bytes(dir / "a/model.bin") == testing::read_bytes(dir / "b/model.bin"));
  const json history = json::parse(testing::read_bytes(dir / "a/history.json"));
  CHECK(history["method"] == "dr");
  CHECK(history["loss_history"].size() == 2);

  const Result viz = cli("viz --ckpt " + root + "/a --data " + root + "/data/val --i 0 --j 4 --out " + root + "/vz", dir);
  CHECK(viz.code == 0);
  CHECK(std::filesystem::exists(dir / "vz/viz/pair_0_4.png"));

  CHECK(cli("curves --history " + root + "/a/history.json --history " + root + "/b/history.json --out " + root + "/cu",
            dir)
            .code == 0);
  CHECK(std::filesystem::exists(dir / "cu/curves.csv"));

  // A baseline checkpoint has no background network to visualize.
  REQUIRE(cli("train --quiet --method ml --config " + cfg + " --data " + root + "/data --out " + root + "/ml", dir).code ==
          0);
  CHECK(cli("viz --ckpt " + root + "/ml --data " + root + "/data/val --out " + root + "/vz2", dir).code != 0);
}
