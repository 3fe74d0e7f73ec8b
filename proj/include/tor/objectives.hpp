#pragma once

// Surrogate objectives for verifiable-reward policy optimization: binary
// rewards, group-standardized advantages, clipped importance ratios, an
// optional per-token KL penalty, dynamic group filtering, and four losses
// (sequence-mean and token-level aggregation, each with and without
// per-token reweighting). Every loss exists twice: as a plain scalar
// evaluation and as a graph builder that produces the same value with
// gradients attached.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tor/autodiff.hpp"
#include "tor/errors.hpp"
#include "tor/policy.hpp"
#include "tor/synthtask.hpp"

namespace tor::objectives {

enum class Aggregation { sequenceMean, tokenLevel };

enum class Algorithm { grpo, dapo, torGrpo, torDapo };

inline std::string algorithmName(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::dapo: return "dapo";
    case Algorithm::torGrpo: return "tor-grpo";
    case Algorithm::torDapo: return "tor-dapo";
  }
  throw ConfigError("unknown algorithm value");
}

inline Algorithm algorithmFromName(const std::string& name) {
  if (name == "grpo") return Algorithm::grpo;
  if (name == "dapo") return Algorithm::dapo;
  if (name == "tor-grpo") return Algorithm::torGrpo;
  if (name == "tor-dapo") return Algorithm::torDapo;
  throw ConfigError("unknown algorithm name: " + name);
}

inline bool isTokenLevel(Algorithm algorithm) {
  return algorithm == Algorithm::dapo || algorithm == Algorithm::torDapo;
}

inline bool isWeighted(Algorithm algorithm) {
  return algorithm == Algorithm::torGrpo || algorithm == Algorithm::torDapo;
}

struct ObjectiveConfig {
  double epsilon = 0.2;       // symmetric clip for sequence-mean objectives
  double epsilonLow = 0.2;    // decoupled clip for token-level objectives
  double epsilonHigh = 0.28;
  double beta = 0.01;         // KL coefficient; token-level objectives carry no KL term
  double advantageEpsilon = 1e-12;
  bool sampleStd = false;     // divide reward variance by G-1 instead of G
  Aggregation aggregation = Aggregation::sequenceMean;

  void validate() const {
    if (!(epsilon > 0.0) || !(epsilonLow > 0.0) || !(epsilonHigh > 0.0)) {
      throw ConfigError("clip widths must be positive");
    }
    if (epsilonLow >= 1.0) {
      throw ConfigError("epsilonLow must stay below 1 so the lower clip bound is positive");
    }
    if (beta < 0.0) {
      throw ConfigError("beta must be nonnegative");
    }
    if (!(advantageEpsilon > 0.0)) {
      throw ConfigError("advantageEpsilon must be positive");
    }
  }

  static ObjectiveConfig forAlgorithm(Algorithm algorithm) {
    ObjectiveConfig config;
    if (isTokenLevel(algorithm)) {
      config.beta = 0.0;
      config.aggregation = Aggregation::tokenLevel;
    }
    return config;
  }
};

// Per-rollout scalar advantages plus the group statistics they came from.
struct GroupAdvantages {
  std::vector<double> advantages;
  double rewardMean = 0.0;
  double rewardStd = 0.0;
};

inline GroupAdvantages groupAdvantage(std::span<const double> rewards, double advantageEpsilon,
                                      bool sampleStd = false) {
  if (rewards.size() < 2) {
    throw UsageError("advantage groups need at least two rollouts");
  }
  if (!(advantageEpsilon > 0.0)) {
    throw ConfigError("advantageEpsilon must be positive");
  }
  GroupAdvantages result;
  double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) {
    mean += r;
  }
  mean /= n;
  double variance = 0.0;
  for (double r : rewards) {
    variance += (r - mean) * (r - mean);
  }
  variance /= sampleStd ? (n - 1.0) : n;
  result.rewardMean = mean;
  result.rewardStd = std::sqrt(variance);
  result.advantages.reserve(rewards.size());
  for (double r : rewards) {
    double value = variance == 0.0 ? 0.0 : (r - mean) / (result.rewardStd + advantageEpsilon);
    result.advantages.push_back(value);
  }
  return result;
}

inline std::vector<std::vector<double>> batchAdvantages(
    const std::vector<std::vector<double>>& rewards, const ObjectiveConfig& config) {
  std::vector<std::vector<double>> result;
  result.reserve(rewards.size());
  for (const std::vector<double>& group : rewards) {
    result.push_back(groupAdvantage(group, config.advantageEpsilon, config.sampleStd).advantages);
  }
  return result;
}

inline std::vector<std::vector<double>> computeRewards(const policy::RolloutBatch& batch,
                                                       const task::Vocabulary& vocab) {
  if (batch.samples.size() != batch.rollouts.size()) {
    throw UsageError("rollout batch has mismatched samples and rollout groups");
  }
  std::vector<std::vector<double>> rewards(batch.samples.size());
  for (std::size_t b = 0; b < batch.samples.size(); ++b) {
    rewards[b].reserve(batch.rollouts[b].size());
    for (const policy::RolloutRecord& record : batch.rollouts[b]) {
      rewards[b].push_back(
          static_cast<double>(task::verify(record.tokens, batch.samples[b].answer, vocab)));
    }
  }
  return rewards;
}

inline bool hasRewardVariance(std::span<const double> rewards) {
  for (double r : rewards) {
    if (r != rewards.front()) {
      return true;
    }
  }
  return false;
}

// Indices of the groups worth training on; an empty result is legal and the
// caller decides whether to resample or give up.
inline std::vector<std::size_t> dynamicSampleFilter(
    const std::vector<std::vector<double>>& rewardGroups) {
  std::vector<std::size_t> retained;
  for (std::size_t g = 0; g < rewardGroups.size(); ++g) {
    if (!rewardGroups[g].empty() && hasRewardVariance(rewardGroups[g])) {
      retained.push_back(g);
    }
  }
  return retained;
}

inline double importanceRatio(double logpNew, double logpOld) {
  return std::exp(logpNew - logpOld);
}

inline double clippedTerm(double ratio, double advantage, double epsilonLow,
                          double epsilonHigh) {
  double clipped = std::clamp(ratio, 1.0 - epsilonLow, 1.0 + epsilonHigh);
  return std::min(ratio * advantage, clipped * advantage);
}

// Nonnegative per-token KL estimate: exp(d) - d - 1 with d = logpRef - logpTheta.
inline double klPenalty(double logpTheta, double logpRef) {
  double d = logpRef - logpTheta;
  return std::exp(d) - d - 1.0;
}

// One rollout's contribution to a loss: per-token log-probs under the current,
// behavior, and (optionally) reference policies, optional per-token weights,
// and the broadcast group advantage.
struct RolloutTerms {
  std::vector<double> logpNew;
  std::vector<double> logpOld;
  std::vector<double> logpRef;
  std::vector<double> weights;
  double advantage = 0.0;

  int length() const { return static_cast<int>(logpNew.size()); }
};

namespace detail {

inline void validateRollout(std::size_t index, std::size_t tokenCount,
                            const std::vector<double>& logpOld,
                            const std::vector<double>& logpRef,
                            const std::vector<double>& weights, bool weighted, bool useKl) {
  std::string label = "rollout " + std::to_string(index);
  if (tokenCount == 0) {
    throw UsageError(label + " has no tokens");
  }
  if (logpOld.size() != tokenCount) {
    throw UsageError(label + " has misaligned behavior log-probs");
  }
  if (weighted) {
    if (weights.size() != tokenCount) {
      throw UsageError(label + " has misaligned token weights");
    }
  } else if (!weights.empty()) {
    throw UsageError(label + " carries token weights but the objective is unweighted");
  }
  if (useKl && logpRef.size() != tokenCount) {
    throw UsageError(label + " needs reference log-probs for the KL penalty");
  }
  if (!logpRef.empty() && logpRef.size() != tokenCount) {
    throw UsageError(label + " has misaligned reference log-probs");
  }
}

inline void requireAggregation(const ObjectiveConfig& config, Aggregation expected) {
  config.validate();
  if (config.aggregation != expected) {
    throw UsageError("objective called with the wrong aggregation mode");
  }
}

inline double sequenceMeanLoss(const std::vector<RolloutTerms>& rollouts,
                               const ObjectiveConfig& config, bool weighted) {
  if (rollouts.empty()) {
    throw UsageError("sequence-mean objectives need at least one rollout");
  }
  bool useKl = config.beta > 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const RolloutTerms& r = rollouts[i];
    validateRollout(i, r.logpNew.size(), r.logpOld, r.logpRef, r.weights, weighted, useKl);
    double acc = 0.0;
    for (int t = 0; t < r.length(); ++t) {
      double ratio = importanceRatio(r.logpNew[t], r.logpOld[t]);
      double term = clippedTerm(ratio, r.advantage, config.epsilon, config.epsilon);
      if (weighted) {
        term *= r.weights[t];
      }
      if (useKl) {
        term -= config.beta * klPenalty(r.logpNew[t], r.logpRef[t]);
      }
      acc += term;
    }
    total += acc / r.length();
  }
  return total / static_cast<double>(rollouts.size());
}

inline double tokenLevelLoss(const std::vector<RolloutTerms>& rollouts,
                             const ObjectiveConfig& config, bool weighted) {
  if (rollouts.empty()) {
    throw DegenerateBatchError("no rollouts survived dynamic sampling");
  }
  double numerator = 0.0;
  long long tokenCount = 0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const RolloutTerms& r = rollouts[i];
    validateRollout(i, r.logpNew.size(), r.logpOld, r.logpRef, r.weights, weighted, false);
    for (int t = 0; t < r.length(); ++t) {
      double ratio = importanceRatio(r.logpNew[t], r.logpOld[t]);
      double term = clippedTerm(ratio, r.advantage, config.epsilonLow, config.epsilonHigh);
      if (weighted) {
        term *= r.weights[t];
      }
      numerator += term;
    }
    tokenCount += r.length();
  }
  return numerator / static_cast<double>(tokenCount);
}

}  // namespace detail

inline double grpoLoss(const std::vector<RolloutTerms>& rollouts,
                       const ObjectiveConfig& config) {
  detail::requireAggregation(config, Aggregation::sequenceMean);
  return detail::sequenceMeanLoss(rollouts, config, false);
}

inline double torGrpoLoss(const std::vector<RolloutTerms>& rollouts,
                          const ObjectiveConfig& config) {
  detail::requireAggregation(config, Aggregation::sequenceMean);
  return detail::sequenceMeanLoss(rollouts, config, true);
}

inline double dapoLoss(const std::vector<RolloutTerms>& rollouts,
                       const ObjectiveConfig& config) {
  detail::requireAggregation(config, Aggregation::tokenLevel);
  return detail::tokenLevelLoss(rollouts, config, false);
}

inline double torDapoLoss(const std::vector<RolloutTerms>& rollouts,
                          const ObjectiveConfig& config) {
  detail::requireAggregation(config, Aggregation::tokenLevel);
  return detail::tokenLevelLoss(rollouts, config, true);
}

inline double objectiveValue(Algorithm algorithm, const std::vector<RolloutTerms>& rollouts,
                             const ObjectiveConfig& config) {
  switch (algorithm) {
    case Algorithm::grpo: return grpoLoss(rollouts, config);
    case Algorithm::dapo: return dapoLoss(rollouts, config);
    case Algorithm::torGrpo: return torGrpoLoss(rollouts, config);
    case Algorithm::torDapo: return torDapoLoss(rollouts, config);
  }
  throw ConfigError("unknown algorithm value");
}

// Diagnostics reported alongside the objective each step. clipFraction counts
// tokens where the min selected the clipped branch strictly; the masked
// fraction counts zero-weight tokens of a reweighted objective.
struct ObjectiveBreakdown {
  double objective = 0.0;
  double klTerm = 0.0;
  double meanRatio = 0.0;
  double clipFraction = 0.0;
  double maskedTokenFraction = 0.0;
};

inline ObjectiveBreakdown decompose(Algorithm algorithm,
                                    const std::vector<RolloutTerms>& rollouts,
                                    const ObjectiveConfig& config) {
  ObjectiveBreakdown result;
  result.objective = objectiveValue(algorithm, rollouts, config);
  bool weighted = isWeighted(algorithm);
  bool useKl = !isTokenLevel(algorithm) && config.beta > 0.0;
  double epsilonLow = isTokenLevel(algorithm) ? config.epsilonLow : config.epsilon;
  double epsilonHigh = isTokenLevel(algorithm) ? config.epsilonHigh : config.epsilon;
  double ratioSum = 0.0;
  double klSum = 0.0;
  long long clipped = 0;
  long long masked = 0;
  long long tokens = 0;
  for (const RolloutTerms& r : rollouts) {
    for (int t = 0; t < r.length(); ++t) {
      double ratio = importanceRatio(r.logpNew[t], r.logpOld[t]);
      ratioSum += ratio;
      double band = std::clamp(ratio, 1.0 - epsilonLow, 1.0 + epsilonHigh);
      if (band * r.advantage < ratio * r.advantage) {
        clipped += 1;
      }
      if (useKl) {
        klSum += klPenalty(r.logpNew[t], r.logpRef[t]);
      }
      if (weighted && r.weights[t] == 0.0) {
        masked += 1;
      }
      tokens += 1;
    }
  }
  if (tokens > 0) {
    result.meanRatio = ratioSum / static_cast<double>(tokens);
    result.klTerm = useKl ? klSum / static_cast<double>(tokens) : 0.0;
    result.clipFraction = static_cast<double>(clipped) / static_cast<double>(tokens);
    result.maskedTokenFraction =
        weighted ? static_cast<double>(masked) / static_cast<double>(tokens) : 0.0;
  }
  return result;
}

// Graph-side counterpart of RolloutTerms: logpNew is a [1, L] node of the
// caller's graph (typically a pick over prediction log-softmax rows), the
// rest enter as constants.
struct RolloutGraphTerms {
  diff::NodeId logpNew = -1;
  std::vector<double> logpOld;
  std::vector<double> logpRef;
  std::vector<double> weights;
  double advantage = 0.0;
};

// Appends the chosen objective to the graph and returns its scalar node.
// The value matches the scalar losses above; gradients flow only through
// the logpNew nodes.
inline diff::NodeId buildObjectiveNode(diff::Graph& graph, Algorithm algorithm,
                                       const std::vector<RolloutGraphTerms>& rollouts,
                                       const ObjectiveConfig& config) {
  bool tokenLevel = isTokenLevel(algorithm);
  detail::requireAggregation(
      config, tokenLevel ? Aggregation::tokenLevel : Aggregation::sequenceMean);
  bool weighted = isWeighted(algorithm);
  bool useKl = !tokenLevel && config.beta > 0.0;
  if (rollouts.empty()) {
    if (tokenLevel) {
      throw DegenerateBatchError("no rollouts survived dynamic sampling");
    }
    throw UsageError("sequence-mean objectives need at least one rollout");
  }
  double epsilonLow = tokenLevel ? config.epsilonLow : config.epsilon;
  double epsilonHigh = tokenLevel ? config.epsilonHigh : config.epsilon;

  std::vector<diff::NodeId> perRollout;
  perRollout.reserve(rollouts.size());
  long long tokenCount = 0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const RolloutGraphTerms& r = rollouts[i];
    if (graph.rowsOf(r.logpNew) != 1) {
      throw UsageError("rollout " + std::to_string(i) + " log-prob node must be a single row");
    }
    std::size_t tokens = static_cast<std::size_t>(graph.colsOf(r.logpNew));
    detail::validateRollout(i, tokens, r.logpOld, r.logpRef, r.weights, weighted, useKl);

    diff::NodeId oldConst = graph.constant(diff::Tensor::rowVector(r.logpOld));
    diff::NodeId ratio = graph.exp(graph.addScaled(r.logpNew, oldConst, -1.0));
    diff::NodeId unclipped = graph.scale(ratio, r.advantage);
    diff::NodeId banded =
        graph.scale(graph.clip(ratio, 1.0 - epsilonLow, 1.0 + epsilonHigh), r.advantage);
    diff::NodeId term = graph.min(unclipped, banded);
    if (weighted) {
      term = graph.mul(term, graph.constant(diff::Tensor::rowVector(r.weights)));
    }
    if (useKl) {
      diff::NodeId refConst = graph.constant(diff::Tensor::rowVector(r.logpRef));
      diff::NodeId delta = graph.addScaled(refConst, r.logpNew, -1.0);
      diff::NodeId estimate =
          graph.addConst(graph.addScaled(graph.exp(delta), delta, -1.0), -1.0);
      term = graph.addScaled(term, estimate, -config.beta);
    }
    if (tokenLevel) {
      perRollout.push_back(graph.sum(term));
    } else {
      perRollout.push_back(graph.scale(graph.sum(term), 1.0 / static_cast<double>(tokens)));
    }
    tokenCount += static_cast<long long>(tokens);
  }
  diff::NodeId stacked = graph.concatRows(perRollout);
  if (tokenLevel) {
    return graph.scale(graph.sum(stacked), 1.0 / static_cast<double>(tokenCount));
  }
  return graph.mean(stacked);
}

}  // namespace tor::objectives
