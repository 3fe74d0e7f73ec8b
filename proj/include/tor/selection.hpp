#pragma once

// Batch-level percentile selection of reasoning tokens (by entropy) and
// perception tokens (by visual sensitivity), and the per-token weight mask
// the reweighted objectives consume.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tor/errors.hpp"

namespace tor::selection {

struct TokenIndex {
  int sample = 0;    // b
  int rollout = 0;   // i
  int position = 0;  // t

  auto operator<=>(const TokenIndex&) const = default;
};

struct SelectionConfig {
  double alphaR = 0.30;
  double alphaP = 0.30;
  double gammaR = 1.0;
  double gammaP = 0.5;
  // Overlapping tokens take gammaR; setting this gives them gammaR + gammaP
  // instead (the additive reading, kept for ablation).
  bool overlapAdditive = false;

  void validate() const {
    if (!(alphaR > 0.0) || alphaR > 1.0 || !(alphaP > 0.0) || alphaP > 1.0) {
      throw ConfigError("selection fractions must lie in (0, 1]");
    }
    if (gammaR < 0.0 || gammaP < 0.0) {
      throw ConfigError("selection weights must be nonnegative");
    }
  }
};

// The (1-alpha)-quantile: sort ascending, take the entry at position
// ceil((1-alpha)*N)+1 (1-based, clamped). Selecting scores >= the returned
// threshold keeps exactly floor(alpha*N) entries when scores are distinct,
// plus any entries tied with the threshold.
inline double percentileThreshold(std::span<const double> scores, double alpha) {
  if (scores.empty()) {
    throw UsageError("percentileThreshold needs a nonempty score list");
  }
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw UsageError("percentile fraction must lie in (0, 1]");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  double n = static_cast<double>(sorted.size());
  // The small backoff keeps ceil exact when (1-alpha)*N is an integer that
  // floating-point rounding nudged upward.
  auto index = static_cast<std::int64_t>(std::ceil((1.0 - alpha) * n - 1e-9)) + 1;
  index = std::clamp<std::int64_t>(index, 1, sorted.size());
  return sorted[static_cast<std::size_t>(index - 1)];
}

enum class ScoreField { entropy, sensitivity };

inline const char* scoreFieldName(ScoreField field) {
  return field == ScoreField::entropy ? "entropy" : "sensitivity";
}

// Score table rows in (b, i, t) order; filled by scoring.buildScoreTable.
// Parallel arrays so selection can run over any subset of columns.
struct ScoreRows {
  std::vector<TokenIndex> index;
  std::vector<double> entropy;
  std::vector<double> sensitivity;

  std::size_t size() const { return index.size(); }
  const std::vector<double>& column(ScoreField field) const {
    return field == ScoreField::entropy ? entropy : sensitivity;
  }

  bool operator==(const ScoreRows&) const = default;
};

// All rows whose score reaches the batch-level percentile threshold, in
// (b, i, t) order.
inline std::vector<TokenIndex> selectTokens(const ScoreRows& rows, ScoreField field,
                                            double alpha) {
  const std::vector<double>& scores = rows.column(field);
  if (rows.size() == 0) {
    throw UsageError("selectTokens needs a nonempty score table");
  }
  if (scores.size() != rows.size()) {
    throw UsageError("score table columns are misaligned");
  }
  double threshold = percentileThreshold(scores, alpha);
  std::vector<TokenIndex> selected;
  for (std::size_t row = 0; row < rows.size(); ++row) {
    if (scores[row] >= threshold) {
      selected.push_back(rows.index[row]);
    }
  }
  return selected;
}

// Per-token weights shaped like the rollout batch: weights[b][i][t].
struct WeightMask {
  std::vector<std::vector<std::vector<double>>> weights;

  double at(const TokenIndex& id) const {
    return weights[static_cast<std::size_t>(id.sample)][static_cast<std::size_t>(id.rollout)]
                  [static_cast<std::size_t>(id.position)];
  }
};

// lengths[b][i] gives the token count of each rollout. Reasoning tokens take
// gammaR (overlap included, unless overlapAdditive), perception-only tokens
// take gammaP, everything else 0.
inline WeightMask buildWeightMask(const std::vector<TokenIndex>& reasoningSet,
                                  const std::vector<TokenIndex>& perceptionSet,
                                  const SelectionConfig& config,
                                  const std::vector<std::vector<int>>& lengths) {
  config.validate();
  WeightMask mask;
  mask.weights.resize(lengths.size());
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    mask.weights[b].resize(lengths[b].size());
    for (std::size_t i = 0; i < lengths[b].size(); ++i) {
      mask.weights[b][i].assign(static_cast<std::size_t>(lengths[b][i]), 0.0);
    }
  }
  auto locate = [&mask](const TokenIndex& id) -> double& {
    auto b = static_cast<std::size_t>(id.sample);
    if (id.sample < 0 || b >= mask.weights.size()) {
      throw UsageError("token index sample out of range");
    }
    auto i = static_cast<std::size_t>(id.rollout);
    if (id.rollout < 0 || i >= mask.weights[b].size()) {
      throw UsageError("token index rollout out of range");
    }
    auto t = static_cast<std::size_t>(id.position);
    if (id.position < 0 || t >= mask.weights[b][i].size()) {
      throw UsageError("token index position out of range");
    }
    return mask.weights[b][i][t];
  };
  for (const TokenIndex& id : perceptionSet) {
    locate(id) = config.gammaP;
  }
  for (const TokenIndex& id : reasoningSet) {
    double& weight = locate(id);
    bool overlapped = (weight == config.gammaP);
    weight = (overlapped && config.overlapAdditive) ? config.gammaR + config.gammaP
                                                    : config.gammaR;
  }
  return mask;
}

}  // namespace tor::selection
