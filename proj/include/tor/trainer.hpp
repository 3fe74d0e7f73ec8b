#pragma once

// The RLVR training loop: sample rollouts under a frozen snapshot, verify
// answers, standardize rewards into advantages, optionally score and select
// tokens for reweighting, then run mini-batch gradient ascent on the chosen
// surrogate objective. Metrics stream out as one JSON line per rollout batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tor/errors.hpp"
#include "tor/objectives.hpp"
#include "tor/policy.hpp"
#include "tor/rng.hpp"
#include "tor/score_table.hpp"
#include "tor/selection.hpp"
#include "tor/synthtask.hpp"

namespace tor::train {

enum class Optimizer { gradientAscent, adam };

inline const char* optimizerName(Optimizer optimizer) {
  return optimizer == Optimizer::adam ? "adam" : "ascent";
}

inline Optimizer optimizerFromName(const std::string& name) {
  if (name == "ascent") return Optimizer::gradientAscent;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + name + "' (ascent | adam)");
}

struct TrainConfig {
  objectives::Algorithm algorithm = objectives::Algorithm::grpo;
  int rolloutBatchSize = 32;   // B: task samples per rollout batch
  int groupSize = 8;           // G: rollouts per sample
  int globalBatchSize = 64;    // optimizer mini-batch, counted in rollouts
  double learningRate = 1e-3;
  int totalRolloutBatches = 300;
  double topP = 0.95;
  int maxLen = 32;
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.0;       // gradient ascent only; 0 = plain
  int epochsPerBatch = 1;      // optimizer passes over each rollout batch
  int warmStartSteps = 200;    // teacher-forced format bootstrap, 0 = cold start
  int betaDecayFrom = -1;      // rollout batch where the KL weight starts decaying, -1 = constant
  double betaFinal = 0.0;      // KL weight at the last rollout batch once decay begins
  std::uint64_t rngSeed = 1;
  task::TaskConfig task;
  policy::PolicyConfig policy;
  selection::SelectionConfig selection;
  objectives::ObjectiveConfig objective;

  static TrainConfig defaults(objectives::Algorithm algorithm, const task::TaskConfig& task) {
    TrainConfig config;
    config.algorithm = algorithm;
    config.task = task;
    config.policy = policy::PolicyConfig::forTask(task);
    config.objective = objectives::ObjectiveConfig::forAlgorithm(algorithm);
    return config;
  }

  void validate() const {
    task.validate();
    policy.validate();
    selection.validate();
    objective.validate();
    if (rolloutBatchSize < 1) {
      throw ConfigError("rolloutBatchSize must be at least 1");
    }
    if (groupSize < 2) {
      throw ConfigError("groupSize must be at least 2 for group-relative advantages");
    }
    if (globalBatchSize < 1 || globalBatchSize > rolloutBatchSize * groupSize) {
      throw ConfigError("globalBatchSize must lie in [1, B*G]");
    }
    if (!(learningRate > 0.0)) {
      throw ConfigError("learningRate must be positive");
    }
    if (totalRolloutBatches < 0) {
      throw ConfigError("totalRolloutBatches must be nonnegative");
    }
    if (!(topP > 0.0) || topP > 1.0) {
      throw ConfigError("topP must lie in (0, 1]");
    }
    if (maxLen < 4) {
      throw ConfigError("maxLen must leave room for a delimited answer");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("momentum must lie in [0, 1)");
    }
    if (epochsPerBatch < 1) {
      throw ConfigError("epochsPerBatch must be at least 1");
    }
    if (warmStartSteps < 0) {
      throw ConfigError("warmStartSteps must be nonnegative");
    }
    if (betaDecayFrom >= 0 && (!(betaFinal >= 0.0) || !std::isfinite(betaFinal))) {
      throw ConfigError("betaFinal must be a nonnegative finite KL weight");
    }
    bool tokenLevel = objectives::isTokenLevel(algorithm);
    bool configuredTokenLevel =
        objective.aggregation == objectives::Aggregation::tokenLevel;
    if (tokenLevel != configuredTokenLevel) {
      throw ConfigError("objective aggregation does not match the algorithm family");
    }
    if (policy.vocabSize != task::Vocabulary{task.alphabetSize}.size()) {
      throw ConfigError("policy vocabulary does not match the task alphabet");
    }
  }
};

struct TrainState {
  policy::PolicyParams params;
  policy::PolicyParams reference;  // frozen at initialization
  int step = 0;                    // completed rollout batches
  // Optimizer buffers in forEachParameter order, allocated on first use.
  std::vector<diff::Tensor> velocity;      // gradient ascent with momentum
  std::vector<diff::Tensor> firstMoment;   // adam
  std::vector<diff::Tensor> secondMoment;  // adam
  long adamUpdates = 0;
};

inline TrainState initialState(const TrainConfig& config) {
  TrainState state;
  state.params = policy::PolicyParams::initialize(config.policy, config.rngSeed);
  policy::warmStart(state.params, config.task, config.warmStartSteps, config.rngSeed);
  state.reference = state.params;
  return state;
}

// Everything one rollout batch produces before the optimizer touches it.
// For token-level algorithms the batch is already restricted to groups with
// reward variance; selection and masks are built on that restricted batch.
struct CollectedBatch {
  policy::RolloutBatch batch;
  std::vector<std::vector<double>> rewards;      // aligned with batch
  std::vector<std::vector<double>> advantages;   // aligned with batch
  scoring::TokenScoreTable table;                // reweighted algorithms only
  std::vector<selection::TokenIndex> reasoningSet;
  std::vector<selection::TokenIndex> perceptionSet;
  selection::WeightMask mask;                    // reweighted algorithms only
  double meanReward = 0.0;                       // over all sampled rollouts, pre-filter
  int sampledGroups = 0;
  int retainedGroups = 0;
};

namespace detail {

inline std::vector<task::SyntheticSample> freshSamples(const TrainConfig& config,
                                                       int batchIndex, int attempt) {
  rng::Stream stream(rng::mix({config.rngSeed, 0x7a51u,
                               static_cast<std::uint64_t>(batchIndex),
                               static_cast<std::uint64_t>(attempt)}));
  std::vector<task::SyntheticSample> samples;
  samples.reserve(static_cast<std::size_t>(config.rolloutBatchSize));
  for (int b = 0; b < config.rolloutBatchSize; ++b) {
    samples.push_back(task::generateSample(stream.nextU64(), config.task));
  }
  return samples;
}

inline double meanOver(const std::vector<std::vector<double>>& groups) {
  double total = 0.0;
  std::size_t count = 0;
  for (const std::vector<double>& group : groups) {
    for (double v : group) {
      total += v;
    }
    count += group.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

inline policy::RolloutBatch filterGroups(const policy::RolloutBatch& batch,
                                         const std::vector<std::size_t>& retained) {
  policy::RolloutBatch result;
  for (std::size_t g : retained) {
    result.samples.push_back(batch.samples[g]);
    result.rollouts.push_back(batch.rollouts[g]);
  }
  // Rollout records keep their original sample index for traceability; the
  // score table and mask index by position in the filtered batch.
  return result;
}

}  // namespace detail

inline CollectedBatch collectRolloutBatch(const TrainState& state, const TrainConfig& config) {
  CollectedBatch collected;
  bool tokenLevel = objectives::isTokenLevel(config.algorithm);
  task::Vocabulary vocab{config.task.alphabetSize};

  int attempts = tokenLevel ? 2 : 1;  // resample once if every group is filtered
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::vector<task::SyntheticSample> samples =
        detail::freshSamples(config, state.step, attempt);
    std::uint64_t rolloutSeed = rng::mix({config.rngSeed, 0x5a3du,
                                          static_cast<std::uint64_t>(state.step),
                                          static_cast<std::uint64_t>(attempt)});
    collected.batch = policy::sampleRollouts(state.params, samples, config.groupSize,
                                             config.topP, config.maxLen, rolloutSeed);
    collected.rewards = objectives::computeRewards(collected.batch, vocab);
    collected.meanReward = detail::meanOver(collected.rewards);
    collected.sampledGroups = static_cast<int>(collected.rewards.size());

    if (!tokenLevel) {
      collected.retainedGroups = collected.sampledGroups;
      break;
    }
    std::vector<std::size_t> retained = objectives::dynamicSampleFilter(collected.rewards);
    if (!retained.empty()) {
      collected.batch = detail::filterGroups(collected.batch, retained);
      std::vector<std::vector<double>> kept;
      kept.reserve(retained.size());
      for (std::size_t g : retained) {
        kept.push_back(collected.rewards[g]);
      }
      collected.rewards = std::move(kept);
      collected.retainedGroups = static_cast<int>(retained.size());
      break;
    }
    if (attempt + 1 == attempts) {
      throw DegenerateBatchError(
          "every group had zero reward variance after resampling at batch " +
          std::to_string(state.step));
    }
  }

  collected.advantages = objectives::batchAdvantages(collected.rewards, config.objective);

  if (objectives::isWeighted(config.algorithm)) {
    collected.table = scoring::buildScoreTable(collected.batch, state.params);
    collected.reasoningSet = selection::selectTokens(
        collected.table.rows, selection::ScoreField::entropy, config.selection.alphaR);
    collected.perceptionSet = selection::selectTokens(
        collected.table.rows, selection::ScoreField::sensitivity, config.selection.alphaP);
    collected.mask = selection::buildWeightMask(collected.reasoningSet, collected.perceptionSet,
                                                config.selection, collected.batch.lengths());
  }
  return collected;
}

// One metrics row per rollout batch, serialized in this key order.
struct BatchMetrics {
  int batch = 0;
  double meanReward = 0.0;
  double objective = 0.0;
  double clipFraction = 0.0;
  double overlapRatio = 0.0;
  double maskedFractionReasoning = 0.0;
  double maskedFractionPerception = 0.0;
  double meanEntropySelected = 0.0;
  double meanSensitivitySelected = 0.0;

  nlohmann::ordered_json toJson() const {
    nlohmann::ordered_json row;
    row["batch"] = batch;
    row["meanReward"] = meanReward;
    row["objective"] = objective;
    row["clipFraction"] = clipFraction;
    row["overlapRatio"] = overlapRatio;
    row["maskedFractionReasoning"] = maskedFractionReasoning;
    row["maskedFractionPerception"] = maskedFractionPerception;
    row["meanEntropySelected"] = meanEntropySelected;
    row["meanSensitivitySelected"] = meanSensitivitySelected;
    return row;
  }
};

namespace detail {

inline double meanScoreOver(const std::vector<selection::TokenIndex>& set,
                            const std::vector<selection::TokenIndex>& rows,
                            const std::vector<double>& scores) {
  if (set.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (const selection::TokenIndex& id : set) {
    auto at = std::lower_bound(rows.begin(), rows.end(), id);
    total += scores[static_cast<std::size_t>(at - rows.begin())];
  }
  return total / static_cast<double>(set.size());
}

inline void fillSelectionMetrics(const CollectedBatch& collected, BatchMetrics& metrics) {
  std::vector<selection::TokenIndex> unionSet;
  std::set_union(collected.reasoningSet.begin(), collected.reasoningSet.end(),
                 collected.perceptionSet.begin(), collected.perceptionSet.end(),
                 std::back_inserter(unionSet));
  std::vector<selection::TokenIndex> overlap;
  std::set_intersection(collected.reasoningSet.begin(), collected.reasoningSet.end(),
                        collected.perceptionSet.begin(), collected.perceptionSet.end(),
                        std::back_inserter(overlap));
  if (!unionSet.empty()) {
    metrics.overlapRatio =
        static_cast<double>(overlap.size()) / static_cast<double>(unionSet.size());
  }
  auto total = static_cast<double>(collected.table.size());
  metrics.maskedFractionReasoning = static_cast<double>(collected.reasoningSet.size()) / total;
  metrics.maskedFractionPerception =
      static_cast<double>(collected.perceptionSet.size()) / total;
  metrics.meanEntropySelected = meanScoreOver(collected.reasoningSet, collected.table.rows.index,
                                              collected.table.rows.entropy);
  metrics.meanSensitivitySelected = meanScoreOver(
      collected.perceptionSet, collected.table.rows.index, collected.table.rows.sensitivity);
}

struct FlatRollout {
  int sample = 0;   // position in the (possibly filtered) batch
  int rollout = 0;
};

constexpr double adamBeta1 = 0.9;
constexpr double adamBeta2 = 0.999;
constexpr double adamEpsilon = 1e-8;

inline void allocateLike(std::vector<diff::Tensor>& buffers, const policy::PolicyParams& params) {
  if (!buffers.empty()) {
    return;
  }
  params.forEachParameter([&buffers](const std::string&, const diff::Tensor& tensor) {
    buffers.emplace_back(tensor.rows(), tensor.cols(),
                         std::vector<double>(tensor.values().size(), 0.0));
  });
}

inline void applyGradients(TrainState& state, const std::vector<diff::Tensor>& gradients,
                           const TrainConfig& config) {
  if (config.optimizer == Optimizer::adam) {
    allocateLike(state.firstMoment, state.params);
    allocateLike(state.secondMoment, state.params);
    state.adamUpdates += 1;
    double correction1 = 1.0 - std::pow(adamBeta1, static_cast<double>(state.adamUpdates));
    double correction2 = 1.0 - std::pow(adamBeta2, static_cast<double>(state.adamUpdates));
    std::size_t slot = 0;
    state.params.forEachParameter([&](const std::string&, diff::Tensor& tensor) {
      const diff::Tensor& gradient = gradients[slot];
      diff::Tensor& m = state.firstMoment[slot];
      diff::Tensor& v = state.secondMoment[slot];
      for (std::size_t k = 0; k < tensor.values().size(); ++k) {
        double g = gradient.values()[k];
        m.values()[k] = adamBeta1 * m.values()[k] + (1.0 - adamBeta1) * g;
        v.values()[k] = adamBeta2 * v.values()[k] + (1.0 - adamBeta2) * g * g;
        double mHat = m.values()[k] / correction1;
        double vHat = v.values()[k] / correction2;
        tensor.values()[k] += config.learningRate * mHat / (std::sqrt(vHat) + adamEpsilon);
      }
      slot += 1;
    });
    return;
  }
  bool useMomentum = config.momentum > 0.0;
  if (useMomentum) {
    allocateLike(state.velocity, state.params);
  }
  std::size_t slot = 0;
  state.params.forEachParameter([&](const std::string&, diff::Tensor& tensor) {
    const diff::Tensor& gradient = gradients[slot];
    if (useMomentum) {
      diff::Tensor& buffer = state.velocity[slot];
      for (std::size_t k = 0; k < buffer.values().size(); ++k) {
        buffer.values()[k] = config.momentum * buffer.values()[k] + gradient.values()[k];
        tensor.values()[k] += config.learningRate * buffer.values()[k];
      }
    } else {
      for (std::size_t k = 0; k < tensor.values().size(); ++k) {
        tensor.values()[k] += config.learningRate * gradient.values()[k];
      }
    }
    slot += 1;
  });
}

}  // namespace detail

// KL weight for a given rollout batch. Constant until betaDecayFrom, then
// linear down to betaFinal at the last batch. A strong early anchor keeps the
// policy from collapsing onto the marginal answer mode before it can read the
// grid; relaxing it late lets the policy commit to what it learned.
inline double scheduledBeta(const TrainConfig& config, int batch) {
  double beta = config.objective.beta;
  if (config.betaDecayFrom < 0 || batch < config.betaDecayFrom) {
    return beta;
  }
  int last = config.totalRolloutBatches - 1;
  if (last <= config.betaDecayFrom) {
    return config.betaFinal;
  }
  double t = static_cast<double>(batch - config.betaDecayFrom) /
             static_cast<double>(last - config.betaDecayFrom);
  return beta + t * (config.betaFinal - beta);
}

inline BatchMetrics updateStep(TrainState& state, const CollectedBatch& collected,
                               const TrainConfig& config) {
  policy::requireFresh(collected.batch, state.params);
  bool tokenLevel = objectives::isTokenLevel(config.algorithm);
  bool weighted = objectives::isWeighted(config.algorithm);
  objectives::ObjectiveConfig objectiveConfig = config.objective;
  objectiveConfig.beta = scheduledBeta(config, state.step);
  bool useKl = !tokenLevel && objectiveConfig.beta > 0.0;

  BatchMetrics metrics;
  metrics.batch = state.step;
  metrics.meanReward = collected.meanReward;
  if (weighted) {
    detail::fillSelectionMetrics(collected, metrics);
  }

  std::vector<detail::FlatRollout> order;
  for (std::size_t b = 0; b < collected.batch.rollouts.size(); ++b) {
    for (std::size_t i = 0; i < collected.batch.rollouts[b].size(); ++i) {
      order.push_back({static_cast<int>(b), static_cast<int>(i)});
    }
  }

  // Reference log-probs only depend on the frozen snapshot; compute them once.
  std::vector<std::vector<std::vector<double>>> refLogps;
  if (useKl) {
    refLogps.resize(collected.batch.rollouts.size());
    for (std::size_t b = 0; b < collected.batch.rollouts.size(); ++b) {
      for (const policy::RolloutRecord& record : collected.batch.rollouts[b]) {
        refLogps[b].push_back(policy::scoreUnderCondition(
            state.reference, collected.batch.samples[b], record,
            policy::ImageCondition::actual));
      }
    }
  }

  double objectiveSum = 0.0;
  long long clippedTokens = 0;
  long long totalTokens = 0;
  int minibatchCount = 0;

  for (int epoch = 0; epoch < config.epochsPerBatch; ++epoch) {
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.globalBatchSize)) {
      std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.globalBatchSize));

      diff::Graph graph(512);
      policy::detail::ParamNodes nodes =
          policy::detail::bindParameters(graph, state.params, true);
      diff::Inputs inputs;
      state.params.forEachParameter(
          [&inputs](const std::string& name, const diff::Tensor& tensor) {
            inputs[name] = &tensor;
          });

      std::vector<objectives::RolloutGraphTerms> terms;
      terms.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        auto [b, i] = order[k];
        const policy::RolloutRecord& record = collected.batch.rollouts[b][i];
        const task::SyntheticSample& sample = collected.batch.samples[b];
        std::vector<int> text(sample.question.begin(), sample.question.end());
        text.insert(text.end(), record.tokens.begin(), record.tokens.end());
        policy::detail::TrunkForward trunk = policy::detail::buildTrunk(
            graph, nodes, config.policy, sample.grid, text,
            static_cast<int>(sample.question.size()));
        diff::NodeId logProbs = policy::detail::predictionLogProbs(
            graph, nodes, trunk, static_cast<int>(sample.question.size()), 0, record.length());
        std::vector<std::pair<int, int>> cells;
        cells.reserve(record.tokens.size());
        for (int t = 0; t < record.length(); ++t) {
          cells.emplace_back(t, record.tokens[static_cast<std::size_t>(t)]);
        }
        objectives::RolloutGraphTerms rollout;
        rollout.logpNew = graph.pick(logProbs, cells);
        rollout.logpOld = record.logProbWithImage;
        if (useKl) {
          rollout.logpRef = refLogps[b][i];
        }
        if (weighted) {
          rollout.weights = collected.mask.weights[b][i];
        }
        rollout.advantage = collected.advantages[b][i];
        terms.push_back(std::move(rollout));
      }

      diff::NodeId objective =
          objectives::buildObjectiveNode(graph, config.algorithm, terms, objectiveConfig);
      graph.setOutput(objective);

      double value = 0.0;
      try {
        value = graph.evaluate(inputs).item();
        graph.backward();
      } catch (const NumericError& error) {
        std::string dump = "mini-batch diverged at batch " + std::to_string(state.step) +
                           ", epoch " + std::to_string(epoch) + ", rollouts [" +
                           std::to_string(start) + ", " + std::to_string(stop) + "): " +
                           error.what();
        throw NumericError(dump);
      }
      objectiveSum += value;
      minibatchCount += 1;

      // Clip statistics from the freshly evaluated log-probs.
      for (std::size_t k = start; k < stop; ++k) {
        const objectives::RolloutGraphTerms& rollout = terms[k - start];
        auto logpNew = graph.valueOf(rollout.logpNew);
        double epsilonLow = tokenLevel ? config.objective.epsilonLow : config.objective.epsilon;
        double epsilonHigh =
            tokenLevel ? config.objective.epsilonHigh : config.objective.epsilon;
        for (std::size_t t = 0; t < logpNew.size(); ++t) {
          double ratio = objectives::importanceRatio(logpNew[t], rollout.logpOld[t]);
          double banded = std::clamp(ratio, 1.0 - epsilonLow, 1.0 + epsilonHigh);
          if (banded * rollout.advantage < ratio * rollout.advantage) {
            clippedTokens += 1;
          }
          totalTokens += 1;
        }
      }

      // Gather and vet every gradient before touching any parameter, so an
      // aborted step leaves the state exactly as it was.
      std::vector<diff::Tensor> gradients;
      state.params.forEachParameter(
          [&graph, &gradients, &state](const std::string& name, const diff::Tensor&) {
            diff::Tensor gradient = graph.inputGradient(name);
            for (double g : gradient.values()) {
              if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient for " + name + " at batch " +
                                   std::to_string(state.step));
              }
            }
            gradients.push_back(std::move(gradient));
          });
      detail::applyGradients(state, gradients, config);
    }
  }

  state.params.versionTag += 1;
  state.step += 1;
  metrics.objective = minibatchCount == 0 ? 0.0 : objectiveSum / minibatchCount;
  metrics.clipFraction =
      totalTokens == 0 ? 0.0
                       : static_cast<double>(clippedTokens) / static_cast<double>(totalTokens);
  return metrics;
}

// Mean verified reward of greedy decodes on freshly drawn task samples.
inline double evaluateGreedy(const policy::PolicyParams& params, const task::TaskConfig& task,
                             int sampleCount, int maxLen, std::uint64_t seed) {
  if (sampleCount < 1) {
    throw UsageError("evaluateGreedy needs at least one sample");
  }
  task::Vocabulary vocab{task.alphabetSize};
  rng::Stream stream(rng::mix({seed, 0x9eedu}));
  double total = 0.0;
  for (int s = 0; s < sampleCount; ++s) {
    task::SyntheticSample sample = task::generateSample(stream.nextU64(), task);
    std::vector<int> tokens = policy::generateGreedy(params, sample.grid, sample.question, maxLen);
    total += task::verify(tokens, sample.answer, vocab);
  }
  return total / static_cast<double>(sampleCount);
}

struct TrainOutputs {
  std::filesystem::path metricsPath;    // empty: keep history in memory only
  std::filesystem::path checkpointDir;  // empty: no checkpoints written
  int checkpointInterval = 0;           // 0: final checkpoint only
};

struct TrainResult {
  TrainState state;
  std::vector<BatchMetrics> history;
};

inline TrainResult trainLoop(const TrainConfig& config, const TrainOutputs& outputs = {}) {
  config.validate();
  TrainResult result;
  result.state = initialState(config);

  std::ofstream metricsFile;
  if (!outputs.metricsPath.empty()) {
    metricsFile.open(outputs.metricsPath);
    if (!metricsFile) {
      throw UsageError("cannot open " + outputs.metricsPath.string() + " for writing");
    }
  }
  auto checkpointName = [&outputs](const std::string& label) {
    return outputs.checkpointDir / ("checkpoint-" + label + ".bin");
  };
  if (!outputs.checkpointDir.empty()) {
    std::filesystem::create_directories(outputs.checkpointDir);
    policy::saveCheckpoint(result.state.params, checkpointName("initial"));
  }

  for (int batch = 0; batch < config.totalRolloutBatches; ++batch) {
    CollectedBatch collected = collectRolloutBatch(result.state, config);
    BatchMetrics metrics = updateStep(result.state, collected, config);
    result.history.push_back(metrics);
    if (metricsFile.is_open()) {
      metricsFile << metrics.toJson().dump() << '\n';
      metricsFile.flush();
    }
    if (!outputs.checkpointDir.empty() && outputs.checkpointInterval > 0 &&
        (batch + 1) % outputs.checkpointInterval == 0) {
      policy::saveCheckpoint(result.state.params,
                             checkpointName(std::to_string(batch + 1)));
    }
  }
  if (!outputs.checkpointDir.empty() && config.totalRolloutBatches > 0) {
    policy::saveCheckpoint(result.state.params, checkpointName("final"));
  }
  return result;
}

}  // namespace tor::train
