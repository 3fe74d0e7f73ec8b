#pragma once

// Per-token scores: top-p prediction entropy (reasoning signal), visual
// sensitivity (perception signal), and Spearman rank correlation for
// comparing scoring proxies. Pure math, no policy dependency; the score
// table built from rollout batches lives in score_table.hpp.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tor/errors.hpp"

namespace tor::scoring {

// Entropy over the top-p nucleus: -sum P(v) log P(v) for v in the smallest
// probability-sorted prefix whose cumulative mass reaches p. The summands
// keep their original (unnormalized) probabilities unless `renormalize` is
// set, which divides by the nucleus mass first.
inline double tokenEntropy(std::span<const double> probs, double p, bool renormalize = false) {
  if (!(p > 0.0) || p > 1.0) {
    throw UsageError("top-p fraction must lie in (0, 1]");
  }
  if (probs.empty()) {
    throw UsageError("tokenEntropy needs a nonempty distribution");
  }
  double total = 0.0;
  for (double v : probs) {
    if (v < 0.0) {
      throw UsageError("tokenEntropy needs nonnegative probabilities");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw UsageError("tokenEntropy needs a normalized distribution, got mass " +
                     std::to_string(total));
  }

  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&probs](int a, int b) { return probs[a] > probs[b]; });

  double mass = 0.0;
  std::size_t nucleusSize = 0;
  for (int id : order) {
    mass += probs[id];
    ++nucleusSize;
    if (mass >= p) {
      break;
    }
  }
  double entropy = 0.0;
  for (std::size_t k = 0; k < nucleusSize; ++k) {
    double q = probs[order[k]];
    if (renormalize) {
      q /= mass;
    }
    if (q > 0.0) {
      entropy -= q * std::log(q);
    }
  }
  return entropy;
}

inline double visualSensitivity(double logProbWithImage, double logProbPlaceholder) {
  return std::abs(logProbWithImage - logProbPlaceholder);
}

namespace detail {

// Average ranks (1-based); tied values share the mean of their rank range.
inline std::vector<double> averageRanks(std::span<const double> values) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&values](int a, int b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
      ++j;
    }
    double sharedRank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = sharedRank;
    }
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Spearman rank correlation with average-rank tie handling (Pearson
// correlation of the rank vectors, which reduces to 1 - 6*sum(d^2)/(n(n^2-1))
// when there are no ties).
inline double rankCorrelation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw UsageError("rankCorrelation needs lists of equal length");
  }
  if (a.size() < 2) {
    throw UsageError("rankCorrelation needs at least two observations");
  }
  std::vector<double> ranksA = detail::averageRanks(a);
  std::vector<double> ranksB = detail::averageRanks(b);
  double n = static_cast<double>(a.size());
  double meanA = std::accumulate(ranksA.begin(), ranksA.end(), 0.0) / n;
  double meanB = std::accumulate(ranksB.begin(), ranksB.end(), 0.0) / n;
  double covariance = 0.0, varianceA = 0.0, varianceB = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = ranksA[i] - meanA;
    double db = ranksB[i] - meanB;
    covariance += da * db;
    varianceA += da * da;
    varianceB += db * db;
  }
  if (varianceA == 0.0 || varianceB == 0.0) {
    throw UndefinedCorrelationError("rank correlation undefined: a list has zero rank variance");
  }
  return covariance / std::sqrt(varianceA * varianceB);
}

// Full-distribution Shannon entropy, used by the entropy-difference proxy.
inline double shannonEntropy(std::span<const double> probs) {
  double entropy = 0.0;
  for (double q : probs) {
    if (q > 0.0) {
      entropy -= q * std::log(q);
    }
  }
  return entropy;
}

}  // namespace tor::scoring
