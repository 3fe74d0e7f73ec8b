#pragma once

// Run orchestration behind the CLI: output directory layout, the run
// manifest with content digests, and the train / analyze / gradcheck /
// compare commands. Commands return process exit codes: 0 success, 2 config
// problem, 3 numeric abort, 4 checkpoint mismatch, 5 failed gradient check.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tor/analysis.hpp"
#include "tor/config.hpp"
#include "tor/errors.hpp"
#include "tor/trainer.hpp"
#include "tor/version.hpp"

namespace tor::run {

inline constexpr int exitOk = 0;
inline constexpr int exitConfig = 2;
inline constexpr int exitNumeric = 3;
inline constexpr int exitCheckpoint = 4;
inline constexpr int exitGradCheck = 5;

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string hexDigest(std::uint64_t hash) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

inline std::string fileDigest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw UsageError("cannot read " + path.string() + " for digesting");
  }
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return hexDigest(fnv1a64(bytes.str()));
}

inline std::string timestampUtc() {
  auto now = std::chrono::system_clock::now();
  std::time_t seconds = std::chrono::system_clock::to_time_t(now);
  std::tm utc{};
  gmtime_r(&seconds, &utc);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buffer;
}

}  // namespace detail

// Output root: TOR_OUTPUT_DIR when set, ./runs otherwise.
inline std::filesystem::path outputRoot() {
  if (const char* dir = std::getenv("TOR_OUTPUT_DIR")) {
    return dir;
  }
  return "runs";
}

inline std::string makeRunId(const std::string& name, const train::TrainConfig& config) {
  return name + "-" + objectives::algorithmName(config.algorithm) + "-s" +
         std::to_string(config.rngSeed);
}

// runs/<runId>/{manifest.json, config.toml, metrics.jsonl, checkpoints/, analysis/}
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path configFile() const { return root / "config.toml"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path analysis() const { return root / "analysis"; }
};

inline RunLayout makeLayout(const std::string& runId) {
  RunLayout layout{outputRoot() / runId};
  std::filesystem::create_directories(layout.root);
  return layout;
}

struct RunManifest {
  std::string runId;
  train::TrainConfig config;
  std::string startedAt;
  std::string finishedAt;  // empty until finalized
  std::vector<std::filesystem::path> outputs;

  nlohmann::ordered_json toJson(const RunLayout& layout) const {
    nlohmann::ordered_json doc;
    doc["runId"] = runId;
    doc["engineVersion"] = engineVersion;
    doc["config"] = config::toConfigText(config);
    doc["startedAt"] = startedAt;
    doc["finishedAt"] = finishedAt;
    doc["outputs"] = nlohmann::ordered_json::array();
    for (const std::filesystem::path& path : outputs) {
      nlohmann::ordered_json entry;
      entry["path"] = std::filesystem::relative(path, layout.root).generic_string();
      if (std::filesystem::exists(path)) {
        entry["bytes"] = static_cast<std::uint64_t>(std::filesystem::file_size(path));
        entry["digest"] = detail::fileDigest(path);
      } else {
        entry["bytes"] = nullptr;
        entry["digest"] = nullptr;
      }
      doc["outputs"].push_back(entry);
    }
    return doc;
  }
};

inline void writeManifest(const RunManifest& manifest, const RunLayout& layout) {
  std::ofstream out(layout.manifest());
  if (!out) {
    throw UsageError("cannot open " + layout.manifest().string() + " for writing");
  }
  out << manifest.toJson(layout).dump(2) << '\n';
}

namespace detail {

inline void collectOutputs(RunManifest& manifest, const RunLayout& layout) {
  manifest.outputs.clear();
  for (const auto& entry : std::filesystem::recursive_directory_iterator(layout.root)) {
    if (entry.is_regular_file() && entry.path() != layout.manifest()) {
      manifest.outputs.push_back(entry.path());
    }
  }
  std::sort(manifest.outputs.begin(), manifest.outputs.end());
}

inline int configFailure(const std::exception& error) {
  std::cerr << "config error: " << error.what() << '\n';
  return exitConfig;
}

}  // namespace detail

// Loads the config file, applies overrides, trains, and leaves manifest,
// materialized config, metrics, and checkpoints under the run directory.
inline int commandTrain(const std::filesystem::path& configPath,
                        const std::vector<std::string>& overrides,
                        const std::string& runName = "") {
  train::TrainConfig config;
  try {
    std::vector<config::Assignment> fileAssignments = config::parseConfigFile(configPath);
    std::vector<config::Assignment> overrideAssignments;
    for (const std::string& text : overrides) {
      overrideAssignments.push_back(config::parseOverride(text));
    }
    config = config::buildTrainConfig(fileAssignments, overrideAssignments);
    config.validate();
  } catch (const Error& error) {
    return detail::configFailure(error);
  }

  std::string name = runName.empty() ? configPath.stem().string() : runName;
  RunManifest manifest;
  manifest.runId = makeRunId(name, config);
  manifest.config = config;
  manifest.startedAt = detail::timestampUtc();
  RunLayout layout = makeLayout(manifest.runId);
  {
    std::ofstream out(layout.configFile());
    out << config::toConfigText(config);
  }
  writeManifest(manifest, layout);

  train::TrainOutputs outputs;
  outputs.metricsPath = layout.metrics();
  outputs.checkpointDir = layout.checkpoints();
  try {
    train::TrainResult result = train::trainLoop(config, outputs);
    double finalReward = train::evaluateGreedy(result.state.params, config.task, 500,
                                               config.maxLen, config.rngSeed ^ 0xe7a1u);
    std::cout << "run " << manifest.runId << ": " << result.history.size()
              << " rollout batches, final greedy reward " << finalReward << '\n';
  } catch (const NumericError& error) {
    std::filesystem::path diagnostic = layout.root / "diagnostic.txt";
    std::ofstream out(diagnostic);
    out << error.what() << '\n';
    std::cerr << "numeric abort: " << error.what() << "\ndiagnostic written to "
              << diagnostic.string() << '\n';
    manifest.finishedAt = detail::timestampUtc();
    detail::collectOutputs(manifest, layout);
    writeManifest(manifest, layout);
    return exitNumeric;
  }

  manifest.finishedAt = detail::timestampUtc();
  detail::collectOutputs(manifest, layout);
  writeManifest(manifest, layout);
  return exitOk;
}

// Scores a fresh rollout batch under a saved checkpoint and writes every
// analysis report next to it.
inline int commandAnalyze(const std::filesystem::path& checkpointPath,
                          const std::filesystem::path& configPath,
                          const std::vector<std::string>& overrides = {}) {
  train::TrainConfig config;
  try {
    std::vector<config::Assignment> fileAssignments = config::parseConfigFile(configPath);
    std::vector<config::Assignment> overrideAssignments;
    for (const std::string& text : overrides) {
      overrideAssignments.push_back(config::parseOverride(text));
    }
    config = config::buildTrainConfig(fileAssignments, overrideAssignments);
    config.validate();
  } catch (const Error& error) {
    return detail::configFailure(error);
  }

  policy::PolicyParams params;
  try {
    params = policy::loadCheckpoint(checkpointPath);
  } catch (const CheckpointError& error) {
    std::cerr << "checkpoint error: " << error.what() << '\n';
    return exitCheckpoint;
  }

  std::string name = checkpointPath.stem().string();
  RunManifest manifest;
  manifest.runId = makeRunId("analyze-" + name, config);
  manifest.config = config;
  manifest.startedAt = detail::timestampUtc();
  RunLayout layout = makeLayout(manifest.runId);
  std::filesystem::create_directories(layout.analysis());
  writeManifest(manifest, layout);

  rng::Stream stream(rng::mix({config.rngSeed, 0xa11cu}));
  std::vector<task::SyntheticSample> samples;
  for (int b = 0; b < config.rolloutBatchSize; ++b) {
    samples.push_back(task::generateSample(stream.nextU64(), config.task));
  }
  policy::RolloutBatch batch = policy::sampleRollouts(
      params, samples, config.groupSize, config.topP, config.maxLen, stream.nextU64());
  scoring::TokenScoreTable table =
      scoring::buildScoreTable(batch, params, scoring::ProxyOptions::all());
  std::vector<selection::TokenIndex> reasoning = selection::selectTokens(
      table.rows, selection::ScoreField::entropy, config.selection.alphaR);
  std::vector<selection::TokenIndex> perception = selection::selectTokens(
      table.rows, selection::ScoreField::sensitivity, config.selection.alphaP);
  std::vector<std::vector<double>> rewards =
      objectives::computeRewards(batch, task::Vocabulary{config.task.alphabetSize});

  auto writeReport = [&layout](const std::string& fileName, auto&& writer) {
    std::filesystem::path path = layout.analysis() / fileName;
    std::ofstream out(path);
    if (!out) {
      throw UsageError("cannot open " + path.string() + " for writing");
    }
    writer(out);
  };
  writeReport("distribution-entropy.csv", [&](std::ostream& out) {
    analysis::writeDistributionCsv(
        analysis::distributionReport(table, selection::ScoreField::entropy), out);
  });
  writeReport("distribution-sensitivity.csv", [&](std::ostream& out) {
    analysis::writeDistributionCsv(
        analysis::distributionReport(table, selection::ScoreField::sensitivity), out);
  });
  writeReport("scatter.csv", [&](std::ostream& out) {
    analysis::writeScatterCsv(
        analysis::interdependenceScatter(batch, table, reasoning, perception), out);
  });
  writeReport("overlap.csv", [&](std::ostream& out) {
    analysis::SelectionSnapshot snapshot{reasoning, perception, table.size()};
    analysis::writeOverlapCsv(
        analysis::overlapTrace(std::vector<analysis::SelectionSnapshot>{snapshot}), out);
  });
  writeReport("mixture.csv", [&](std::ostream& out) {
    analysis::writeMixtureCsv(analysis::mixtureReport(batch, reasoning, perception, rewards),
                              out);
  });
  writeReport("proxy-matrix.csv", [&](std::ostream& out) {
    analysis::writeProxyMatrixCsv(analysis::proxyComparison(table), out);
  });
  writeReport("selected-reasoning.csv", [&](std::ostream& out) {
    analysis::writeSelectedSetCsv(table, reasoning, selection::ScoreField::entropy, out);
  });
  writeReport("selected-perception.csv", [&](std::ostream& out) {
    analysis::writeSelectedSetCsv(table, perception, selection::ScoreField::sensitivity, out);
  });

  manifest.finishedAt = detail::timestampUtc();
  detail::collectOutputs(manifest, layout);
  writeManifest(manifest, layout);
  std::cout << "analysis written to " << layout.analysis().string() << '\n';
  return exitOk;
}

// Finite-difference check of all four objectives on a tiny synthetic graph
// shaped like real rollout terms.
inline int commandGradCheck(const std::filesystem::path& configPath,
                            bool corruptFirstAdjoint = false) {
  train::TrainConfig config;
  try {
    config = config::buildTrainConfig(config::parseConfigFile(configPath));
    config.validate();
  } catch (const Error& error) {
    return detail::configFailure(error);
  }

  rng::Stream stream(rng::mix({config.rngSeed, 0x6cadu}));
  bool allPass = true;
  for (objectives::Algorithm algorithm :
       {objectives::Algorithm::grpo, objectives::Algorithm::dapo,
        objectives::Algorithm::torGrpo, objectives::Algorithm::torDapo}) {
    objectives::ObjectiveConfig objective = objectives::ObjectiveConfig::forAlgorithm(algorithm);

    diff::Graph graph(64);
    diff::Inputs inputs;
    std::vector<diff::Tensor> holders;
    std::vector<objectives::RolloutGraphTerms> terms;
    const int rollouts = 4;
    const int tokens = 5;
    holders.reserve(rollouts);
    for (int i = 0; i < rollouts; ++i) {
      std::vector<double> logpNew(tokens), logpOld(tokens), logpRef(tokens), weights(tokens);
      for (int t = 0; t < tokens; ++t) {
        logpNew[static_cast<std::size_t>(t)] = -1.0 - 0.4 * stream.nextUnit();
        logpOld[static_cast<std::size_t>(t)] =
            logpNew[static_cast<std::size_t>(t)] + 0.3 * (stream.nextUnit() - 0.5);
        logpRef[static_cast<std::size_t>(t)] =
            logpNew[static_cast<std::size_t>(t)] + 0.3 * (stream.nextUnit() - 0.5);
        weights[static_cast<std::size_t>(t)] = (t % 2 == 0) ? 1.0 : 0.5;
      }
      objectives::RolloutGraphTerms rollout;
      std::string name = "logp" + std::to_string(i);
      rollout.logpNew = graph.input(name, 1, tokens);
      rollout.logpOld = logpOld;
      if (objective.beta > 0.0) {
        rollout.logpRef = logpRef;
      }
      if (objectives::isWeighted(algorithm)) {
        rollout.weights = weights;
      }
      rollout.advantage = stream.nextUnit() * 2.0 - 1.0;
      holders.emplace_back(1, tokens, logpNew);
      terms.push_back(rollout);
    }
    for (int i = 0; i < rollouts; ++i) {
      inputs["logp" + std::to_string(i)] = &holders[static_cast<std::size_t>(i)];
    }
    graph.setOutput(objectives::buildObjectiveNode(graph, algorithm, terms, objective));

    diff::FdCheckReport report = diff::finiteDifferenceCheck(
        graph, inputs, {.stepSize = 1e-5, .tolerance = 1e-4,
                        .corruptFirstAdjoint = corruptFirstAdjoint});
    std::printf("%-9s maxRelError %.3e  %s\n", objectives::algorithmName(algorithm).c_str(),
                report.maxRelError, report.pass ? "pass" : "FAIL");
    if (!report.pass) {
      allPass = false;
      for (const diff::FdCheckEntry& entry : report.entries) {
        if (entry.name == report.worstInput) {
          std::printf("  worst: %s[%d] analytic %.6e numeric %.6e\n", entry.name.c_str(),
                      entry.worstIndex, entry.analyticAtWorst, entry.numericAtWorst);
        }
      }
    }
  }
  return allPass ? exitOk : exitGradCheck;
}

// Trains every (algorithm, seed) pair on identical task streams and writes
// one CSV of final greedy rewards plus per-algorithm mean and standard
// deviation rows. Failed runs leave a marked cell instead of aborting the
// sweep.
inline int commandCompare(const std::filesystem::path& configPath,
                          const std::vector<std::string>& algorithms,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<std::string>& overrides = {}) {
  if (algorithms.empty() || seeds.empty()) {
    std::cerr << "config error: compare needs at least one algorithm and one seed\n";
    return exitConfig;
  }
  std::vector<config::Assignment> fileAssignments;
  std::vector<config::Assignment> overrideAssignments;
  try {
    fileAssignments = config::parseConfigFile(configPath);
    for (const std::string& text : overrides) {
      overrideAssignments.push_back(config::parseOverride(text));
    }
    for (const std::string& algorithm : algorithms) {
      objectives::algorithmFromName(algorithm);
    }
  } catch (const Error& error) {
    return detail::configFailure(error);
  }

  RunLayout layout = makeLayout("compare-" + configPath.stem().string());
  std::filesystem::path summaryPath = layout.root / "summary.csv";
  std::ofstream summary(summaryPath);
  if (!summary) {
    std::cerr << "config error: cannot open " << summaryPath.string() << " for writing\n";
    return exitConfig;
  }
  summary << "algorithm,seed,finalReward\n";

  bool anyFailed = false;
  std::vector<std::pair<std::string, std::vector<double>>> finals;
  for (const std::string& algorithm : algorithms) {
    finals.push_back({algorithm, {}});
    for (std::uint64_t seed : seeds) {
      std::vector<config::Assignment> pairOverrides = overrideAssignments;
      pairOverrides.push_back({"algorithm", algorithm});
      pairOverrides.push_back({"trainer.rngSeed", std::to_string(seed)});
      summary << algorithm << ',' << seed << ',';
      try {
        train::TrainConfig config = config::buildTrainConfig(fileAssignments, pairOverrides);
        config.validate();
        train::TrainResult result = train::trainLoop(config);
        double finalReward = train::evaluateGreedy(result.state.params, config.task, 500,
                                                   config.maxLen, 0x97eedu);
        finals.back().second.push_back(finalReward);
        char buffer[32];
        std::snprintf(buffer, sizeof(buffer), "%.6f", finalReward);
        summary << buffer << '\n';
        std::cout << algorithm << " seed " << seed << ": final greedy " << finalReward
                  << '\n';
      } catch (const Error& error) {
        anyFailed = true;
        summary << "failed\n";
        std::cerr << algorithm << " seed " << seed << " failed: " << error.what() << '\n';
      }
      summary.flush();
    }
  }
  summary << "algorithm,meanFinalReward,stdFinalReward\n";
  for (const auto& [algorithm, values] : finals) {
    summary << algorithm << ',';
    if (values.empty()) {
      summary << "failed,failed\n";
      continue;
    }
    double mean = 0.0;
    for (double v : values) {
      mean += v;
    }
    mean /= static_cast<double>(values.size());
    double variance = 0.0;
    for (double v : values) {
      variance += (v - mean) * (v - mean);
    }
    variance /= static_cast<double>(values.size());
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6f,%.6f", mean, std::sqrt(variance));
    summary << buffer << '\n';
  }
  std::cout << "summary written to " << summaryPath.string() << '\n';
  return anyFailed ? exitNumeric : exitOk;
}

}  // namespace tor::run
