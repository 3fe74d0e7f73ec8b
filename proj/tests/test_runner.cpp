#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tor/runner.hpp"

namespace fs = std::filesystem;
using namespace tor::run;

namespace {

struct ScopedOutputDir {
  fs::path dir;

  explicit ScopedOutputDir(const std::string& name) {
    dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    setenv("TOR_OUTPUT_DIR", dir.c_str(), 1);
  }
  ~ScopedOutputDir() {
    unsetenv("TOR_OUTPUT_DIR");
    fs::remove_all(dir);
  }
};

fs::path writeTinyConfig(const fs::path& dir, const std::string& extra = "") {
  fs::path path = dir / "tiny.toml";
  std::ofstream out(path);
  out << "algorithm = \"grpo\"\n"
         "[task]\ngridHeight = 2\ngridWidth = 2\nalphabetSize = 3\n"
         "[policy]\nembedDim = 8\nnumBlocks = 1\n"
         "[trainer]\ntotalRolloutBatches = 2\nwarmStartSteps = 10\n"
         "rolloutBatchSize = 4\ngroupSize = 4\nglobalBatchSize = 8\nmaxLen = 8\n"
      << extra;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

}  // namespace

TEST_CASE("the output root follows the environment override") {
  ScopedOutputDir scope("tor_runner_root");
  CHECK(outputRoot() == scope.dir);
  unsetenv("TOR_OUTPUT_DIR");
  CHECK(outputRoot() == fs::path("runs"));
  setenv("TOR_OUTPUT_DIR", scope.dir.c_str(), 1);
}

TEST_CASE("run ids name the config, algorithm, and seed") {
  tor::train::TrainConfig config = tor::config::buildTrainConfig(
      {{"algorithm", "tor-grpo"}, {"trainer.rngSeed", "11"}});
  CHECK(makeRunId("demo", config) == "demo-tor-grpo-s11");
}

TEST_CASE("training writes the full run directory and a finalized manifest") {
  ScopedOutputDir scope("tor_runner_train");
  fs::path configPath = writeTinyConfig(scope.dir);

  int status = commandTrain(configPath, {"trainer.rngSeed=3"});
  REQUIRE(status == exitOk);

  fs::path runDir = scope.dir / "tiny-grpo-s3";
  REQUIRE(fs::exists(runDir / "manifest.json"));
  REQUIRE(fs::exists(runDir / "config.toml"));
  REQUIRE(fs::exists(runDir / "metrics.jsonl"));
  REQUIRE(fs::exists(runDir / "checkpoints" / "checkpoint-initial.bin"));
  REQUIRE(fs::exists(runDir / "checkpoints" / "checkpoint-final.bin"));

  nlohmann::json manifest = nlohmann::json::parse(slurp(runDir / "manifest.json"));
  CHECK(manifest["runId"] == "tiny-grpo-s3");
  CHECK_FALSE(manifest["finishedAt"].get<std::string>().empty());
  REQUIRE(manifest["outputs"].is_array());
  REQUIRE_FALSE(manifest["outputs"].empty());
  for (const auto& entry : manifest["outputs"]) {
    fs::path listed = runDir / entry["path"].get<std::string>();
    REQUIRE(fs::exists(listed));
    CHECK(entry["bytes"].get<std::uint64_t>() == fs::file_size(listed));
    CHECK(entry["digest"].get<std::string>().size() == 16);
  }

  std::istringstream metrics(slurp(runDir / "metrics.jsonl"));
  std::string line;
  int rows = 0;
  while (std::getline(metrics, line)) {
    nlohmann::json row = nlohmann::json::parse(line);
    CHECK(row.contains("meanReward"));
    rows += 1;
  }
  CHECK(rows == 2);
}

TEST_CASE("the manifest config reproduces itself when fed back in") {
  ScopedOutputDir scope("tor_runner_roundtrip");
  fs::path configPath = writeTinyConfig(scope.dir);
  REQUIRE(commandTrain(configPath, {"selection.gammaP=0.5"}) == exitOk);

  nlohmann::json manifest =
      nlohmann::json::parse(slurp(scope.dir / "tiny-grpo-s1" / "manifest.json"));
  std::string materialized = manifest["config"].get<std::string>();
  tor::train::TrainConfig reparsed =
      tor::config::buildTrainConfig(tor::config::parseConfigText(materialized));
  CHECK(tor::config::toConfigText(reparsed) == materialized);
  CHECK(reparsed.selection.gammaP == 0.5);
}

TEST_CASE("a missing or invalid config exits with the config status") {
  ScopedOutputDir scope("tor_runner_badcfg");
  CHECK(commandTrain(scope.dir / "absent.toml", {}) == exitConfig);

  fs::path configPath = writeTinyConfig(scope.dir);
  CHECK(commandTrain(configPath, {"trainer.warp=9"}) == exitConfig);
  CHECK(commandTrain(configPath, {"trainer.groupSize=1"}) == exitConfig);
}

TEST_CASE("analysis emits every report and is seed-stable") {
  ScopedOutputDir scope("tor_runner_analyze");
  fs::path configPath = writeTinyConfig(scope.dir);
  REQUIRE(commandTrain(configPath, {}) == exitOk);
  fs::path checkpoint = scope.dir / "tiny-grpo-s1" / "checkpoints" / "checkpoint-final.bin";

  REQUIRE(commandAnalyze(checkpoint, configPath) == exitOk);
  fs::path analysisDir = scope.dir / "analyze-checkpoint-final-grpo-s1" / "analysis";
  std::vector<std::string> expected = {
      "distribution-entropy.csv", "distribution-sensitivity.csv",
      "scatter.csv",              "overlap.csv",
      "mixture.csv",              "proxy-matrix.csv",
      "selected-reasoning.csv",   "selected-perception.csv",
  };
  std::vector<std::string> firstPass;
  for (const std::string& name : expected) {
    REQUIRE(fs::exists(analysisDir / name));
    firstPass.push_back(slurp(analysisDir / name));
  }

  REQUIRE(commandAnalyze(checkpoint, configPath) == exitOk);
  for (std::size_t k = 0; k < expected.size(); ++k) {
    CHECK(slurp(analysisDir / expected[k]) == firstPass[k]);
  }
}

TEST_CASE("a corrupt checkpoint exits with the checkpoint status") {
  ScopedOutputDir scope("tor_runner_badckpt");
  fs::path configPath = writeTinyConfig(scope.dir);
  fs::path badCheckpoint = scope.dir / "garbage.bin";
  std::ofstream(badCheckpoint) << "not a checkpoint";
  CHECK(commandAnalyze(badCheckpoint, configPath) == exitCheckpoint);
}

TEST_CASE("the gradient check passes clean and fails when sabotaged") {
  ScopedOutputDir scope("tor_runner_gradcheck");
  fs::path configPath = writeTinyConfig(scope.dir);
  CHECK(commandGradCheck(configPath) == exitOk);
  CHECK(commandGradCheck(configPath, true) == exitGradCheck);
}

TEST_CASE("compare writes one row per run plus summary statistics") {
  ScopedOutputDir scope("tor_runner_compare");
  fs::path configPath = writeTinyConfig(scope.dir);

  REQUIRE(commandCompare(configPath, {"grpo", "tor-grpo"}, {1, 2}) == exitOk);
  std::istringstream summary(slurp(scope.dir / "compare-tiny" / "summary.csv"));
  std::string line;
  std::getline(summary, line);
  CHECK(line == "algorithm,seed,finalReward");
  int runRows = 0;
  while (std::getline(summary, line) && line != "algorithm,meanFinalReward,stdFinalReward") {
    runRows += 1;
  }
  CHECK(runRows == 4);
  int summaryRows = 0;
  while (std::getline(summary, line)) {
    summaryRows += 1;
  }
  CHECK(summaryRows == 2);

  CHECK(commandCompare(configPath, {}, {1}) == exitConfig);
  CHECK(commandCompare(configPath, {"grpo"}, {}) == exitConfig);
}

TEST_CASE("a single run summary has zero standard deviation") {
  ScopedOutputDir scope("tor_runner_compare_one");
  fs::path configPath = writeTinyConfig(scope.dir);
  REQUIRE(commandCompare(configPath, {"grpo"}, {5}) == exitOk);
  std::string text = slurp(scope.dir / "compare-tiny" / "summary.csv");
  CHECK(text.find(",0.000000\n") != std::string::npos);
}
