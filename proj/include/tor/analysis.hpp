#pragma once

// Diagnostic reports over rollout score tables: score distributions with
// top-fraction thresholds, per-rollout reasoning/perception scatter data,
// selection-overlap traces across batches, per-rollout token mixtures, and
// rank-correlation comparison of the perception proxies. Every report is a
// pure function of its inputs; CSV writers emit one file per report.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tor/errors.hpp"
#include "tor/policy.hpp"
#include "tor/score_table.hpp"
#include "tor/scoring.hpp"
#include "tor/selection.hpp"

namespace tor::analysis {

inline constexpr int histogramBins = 50;
inline constexpr std::array<double, 3> reportFractions = {0.2, 0.3, 0.5};

struct DistributionReport {
  std::string field;
  std::size_t count = 0;
  double mean = 0.0;
  // thresholds[k] is the cut at reportFractions[k]: that fraction of tokens
  // scores >= the value. Non-increasing in the fraction.
  std::array<double, 3> thresholds{};
  std::vector<double> binEdges;  // histogramBins + 1 uniform edges over [min, max]
  std::vector<std::size_t> binCounts;
};

inline DistributionReport distributionReport(const scoring::TokenScoreTable& table,
                                             selection::ScoreField field) {
  if (table.size() == 0) {
    throw UsageError("distributionReport needs a nonempty score table");
  }
  const std::vector<double>& scores = table.rows.column(field);
  DistributionReport report;
  report.field = selection::scoreFieldName(field);
  report.count = scores.size();
  double lo = scores[0], hi = scores[0], sum = 0.0;
  for (double v : scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  report.mean = sum / static_cast<double>(scores.size());
  for (std::size_t k = 0; k < reportFractions.size(); ++k) {
    report.thresholds[k] = selection::percentileThreshold(scores, reportFractions[k]);
  }
  report.binEdges.resize(histogramBins + 1);
  for (int k = 0; k <= histogramBins; ++k) {
    report.binEdges[static_cast<std::size_t>(k)] =
        lo + (hi - lo) * static_cast<double>(k) / histogramBins;
  }
  report.binEdges.back() = hi;
  report.binCounts.assign(histogramBins, 0);
  double width = (hi - lo) / histogramBins;
  for (double v : scores) {
    int bin = width > 0.0 ? std::min(histogramBins - 1,
                                     static_cast<int>(std::floor((v - lo) / width)))
                          : 0;
    report.binCounts[static_cast<std::size_t>(bin)] += 1;
  }
  return report;
}

// One point per rollout: mean and max of each score over that rollout's
// selected tokens. A rollout with no selected token of a kind leaves that
// side empty.
struct ScatterPoint {
  int sample = 0;
  int rollout = 0;
  std::optional<double> meanEntropy;
  std::optional<double> maxEntropy;
  std::optional<double> meanSensitivity;
  std::optional<double> maxSensitivity;
};

namespace detail {

struct Accumulator {
  double sum = 0.0;
  double peak = 0.0;
  int count = 0;

  void add(double v) {
    sum += v;
    peak = count == 0 ? v : std::max(peak, v);
    count += 1;
  }
};

inline bool contains(const std::vector<selection::TokenIndex>& sorted,
                     const selection::TokenIndex& id) {
  return std::binary_search(sorted.begin(), sorted.end(), id);
}

}  // namespace detail

inline std::vector<ScatterPoint> interdependenceScatter(
    const policy::RolloutBatch& batch, const scoring::TokenScoreTable& table,
    const std::vector<selection::TokenIndex>& reasoningSet,
    const std::vector<selection::TokenIndex>& perceptionSet) {
  std::size_t rolloutCount = 0;
  for (const auto& group : batch.rollouts) {
    rolloutCount += group.size();
  }
  std::vector<ScatterPoint> points;
  points.reserve(rolloutCount);
  std::vector<detail::Accumulator> entropyAcc(rolloutCount);
  std::vector<detail::Accumulator> sensitivityAcc(rolloutCount);
  std::vector<std::size_t> flatIndex(batch.rollouts.size() + 1, 0);
  for (std::size_t b = 0; b < batch.rollouts.size(); ++b) {
    flatIndex[b + 1] = flatIndex[b] + batch.rollouts[b].size();
    for (std::size_t i = 0; i < batch.rollouts[b].size(); ++i) {
      ScatterPoint point;
      point.sample = static_cast<int>(b);
      point.rollout = static_cast<int>(i);
      points.push_back(point);
    }
  }
  for (std::size_t row = 0; row < table.size(); ++row) {
    const selection::TokenIndex& id = table.rows.index[row];
    std::size_t flat = flatIndex[static_cast<std::size_t>(id.sample)] +
                       static_cast<std::size_t>(id.rollout);
    if (detail::contains(reasoningSet, id)) {
      entropyAcc[flat].add(table.rows.entropy[row]);
    }
    if (detail::contains(perceptionSet, id)) {
      sensitivityAcc[flat].add(table.rows.sensitivity[row]);
    }
  }
  for (std::size_t flat = 0; flat < points.size(); ++flat) {
    if (entropyAcc[flat].count > 0) {
      points[flat].meanEntropy = entropyAcc[flat].sum / entropyAcc[flat].count;
      points[flat].maxEntropy = entropyAcc[flat].peak;
    }
    if (sensitivityAcc[flat].count > 0) {
      points[flat].meanSensitivity = sensitivityAcc[flat].sum / sensitivityAcc[flat].count;
      points[flat].maxSensitivity = sensitivityAcc[flat].peak;
    }
  }
  return points;
}

// Selected sets of one rollout batch plus the batch's total token count,
// the unit the overlap trace is computed over.
struct SelectionSnapshot {
  std::vector<selection::TokenIndex> reasoning;
  std::vector<selection::TokenIndex> perception;
  std::size_t totalTokens = 0;
};

struct OverlapPoint {
  double jaccard = 0.0;            // |Tr ∩ Tp| / |Tr ∪ Tp|
  double intersectionShare = 0.0;  // |Tr ∩ Tp| / totalTokens
};

inline std::vector<OverlapPoint> overlapTrace(std::span<const SelectionSnapshot> history) {
  std::vector<OverlapPoint> trace;
  trace.reserve(history.size());
  for (const SelectionSnapshot& snapshot : history) {
    std::vector<selection::TokenIndex> common;
    std::set_intersection(snapshot.reasoning.begin(), snapshot.reasoning.end(),
                          snapshot.perception.begin(), snapshot.perception.end(),
                          std::back_inserter(common));
    std::size_t unionSize =
        snapshot.reasoning.size() + snapshot.perception.size() - common.size();
    OverlapPoint point;
    point.jaccard = unionSize == 0
                        ? 0.0
                        : static_cast<double>(common.size()) / static_cast<double>(unionSize);
    point.intersectionShare = snapshot.totalTokens == 0
                                  ? 0.0
                                  : static_cast<double>(common.size()) /
                                        static_cast<double>(snapshot.totalTokens);
    trace.push_back(point);
  }
  return trace;
}

struct MixtureRow {
  int sample = 0;
  int rollout = 0;
  double reasoningSelectedFraction = 0.0;
  double perceptionSelectedFraction = 0.0;
  double reward = 0.0;
};

inline std::vector<MixtureRow> mixtureReport(
    const policy::RolloutBatch& batch,
    const std::vector<selection::TokenIndex>& reasoningSet,
    const std::vector<selection::TokenIndex>& perceptionSet,
    const std::vector<std::vector<double>>& rewards) {
  if (rewards.size() != batch.rollouts.size()) {
    throw UsageError("mixtureReport rewards do not match the batch shape");
  }
  std::vector<MixtureRow> rows;
  for (std::size_t b = 0; b < batch.rollouts.size(); ++b) {
    if (rewards[b].size() != batch.rollouts[b].size()) {
      throw UsageError("mixtureReport rewards do not match the batch shape");
    }
    for (std::size_t i = 0; i < batch.rollouts[b].size(); ++i) {
      MixtureRow row;
      row.sample = static_cast<int>(b);
      row.rollout = static_cast<int>(i);
      row.reward = rewards[b][i];
      int length = batch.rollouts[b][i].length();
      int reasoningCount = 0;
      int perceptionCount = 0;
      for (int t = 0; t < length; ++t) {
        selection::TokenIndex id{static_cast<int>(b), static_cast<int>(i), t};
        reasoningCount += detail::contains(reasoningSet, id) ? 1 : 0;
        perceptionCount += detail::contains(perceptionSet, id) ? 1 : 0;
      }
      if (length > 0) {
        row.reasoningSelectedFraction = static_cast<double>(reasoningCount) / length;
        row.perceptionSelectedFraction = static_cast<double>(perceptionCount) / length;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline constexpr std::array<const char*, 4> proxyNames = {"sensitivity", "probDiff",
                                                          "entropyDiff", "attentionMass"};

// Spearman correlations between the perception proxies. A zero-variance
// column leaves its row and column undefined rather than failing the report.
struct ProxyMatrix {
  std::array<std::array<double, 4>, 4> value{};
  std::array<std::array<bool, 4>, 4> defined{};
};

inline ProxyMatrix proxyComparison(const scoring::TokenScoreTable& table) {
  std::array<const std::vector<double>*, 4> columns = {
      &table.rows.sensitivity, &table.probDiff, &table.entropyDiff, &table.attentionMass};
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c]->size() != table.size()) {
      throw UsageError(std::string("proxyComparison needs the ") + proxyNames[c] +
                       " column filled for every row");
    }
  }
  if (table.size() < 2) {
    throw UsageError("proxyComparison needs at least two rows");
  }
  ProxyMatrix matrix;
  for (std::size_t a = 0; a < columns.size(); ++a) {
    matrix.value[a][a] = 1.0;
    matrix.defined[a][a] = true;
    for (std::size_t b = a + 1; b < columns.size(); ++b) {
      try {
        double rho = scoring::rankCorrelation(*columns[a], *columns[b]);
        matrix.value[a][b] = matrix.value[b][a] = rho;
        matrix.defined[a][b] = matrix.defined[b][a] = true;
      } catch (const UndefinedCorrelationError&) {
        matrix.defined[a][b] = matrix.defined[b][a] = false;
      }
    }
  }
  return matrix;
}

// ---- CSV writers ----

namespace detail {

inline void writeNumber(std::ostream& out, double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  out << buffer;
}

inline void writeOptional(std::ostream& out, const std::optional<double>& v) {
  if (v.has_value()) {
    writeNumber(out, *v);
  }
}

template <typename Writer>
void writeCsvFile(const std::filesystem::path& path, Writer&& writer) {
  std::ofstream out(path);
  if (!out) {
    throw UsageError("cannot open " + path.string() + " for writing");
  }
  writer(out);
}

}  // namespace detail

inline void writeDistributionCsv(const DistributionReport& report, std::ostream& out) {
  out << "field,count,mean,thresholdTop20,thresholdTop30,thresholdTop50\n";
  out << report.field << ',' << report.count << ',';
  detail::writeNumber(out, report.mean);
  for (double threshold : report.thresholds) {
    out << ',';
    detail::writeNumber(out, threshold);
  }
  out << "\nbinLow,binHigh,count\n";
  for (std::size_t k = 0; k < report.binCounts.size(); ++k) {
    detail::writeNumber(out, report.binEdges[k]);
    out << ',';
    detail::writeNumber(out, report.binEdges[k + 1]);
    out << ',' << report.binCounts[k] << '\n';
  }
}

inline void writeScatterCsv(std::span<const ScatterPoint> points, std::ostream& out) {
  out << "b,i,meanEntropy,maxEntropy,meanSensitivity,maxSensitivity\n";
  for (const ScatterPoint& point : points) {
    out << point.sample << ',' << point.rollout << ',';
    detail::writeOptional(out, point.meanEntropy);
    out << ',';
    detail::writeOptional(out, point.maxEntropy);
    out << ',';
    detail::writeOptional(out, point.meanSensitivity);
    out << ',';
    detail::writeOptional(out, point.maxSensitivity);
    out << '\n';
  }
}

inline void writeOverlapCsv(std::span<const OverlapPoint> trace, std::ostream& out) {
  out << "batch,jaccard,intersectionShare\n";
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out << k << ',';
    detail::writeNumber(out, trace[k].jaccard);
    out << ',';
    detail::writeNumber(out, trace[k].intersectionShare);
    out << '\n';
  }
}

inline void writeMixtureCsv(std::span<const MixtureRow> rows, std::ostream& out) {
  out << "b,i,reasoningSelectedFraction,perceptionSelectedFraction,reward\n";
  for (const MixtureRow& row : rows) {
    out << row.sample << ',' << row.rollout << ',';
    detail::writeNumber(out, row.reasoningSelectedFraction);
    out << ',';
    detail::writeNumber(out, row.perceptionSelectedFraction);
    out << ',';
    detail::writeNumber(out, row.reward);
    out << '\n';
  }
}

inline void writeProxyMatrixCsv(const ProxyMatrix& matrix, std::ostream& out) {
  out << "proxy";
  for (const char* name : proxyNames) {
    out << ',' << name;
  }
  out << '\n';
  for (std::size_t a = 0; a < proxyNames.size(); ++a) {
    out << proxyNames[a];
    for (std::size_t b = 0; b < proxyNames.size(); ++b) {
      out << ',';
      if (matrix.defined[a][b]) {
        detail::writeNumber(out, matrix.value[a][b]);
      } else {
        out << "undefined";
      }
    }
    out << '\n';
  }
}

inline void writeSelectedSetCsv(const scoring::TokenScoreTable& table,
                                const std::vector<selection::TokenIndex>& selected,
                                selection::ScoreField field, std::ostream& out) {
  out << "b,i,t,field,score\n";
  const std::vector<double>& scores = table.rows.column(field);
  for (std::size_t row = 0; row < table.size(); ++row) {
    if (!detail::contains(selected, table.rows.index[row])) {
      continue;
    }
    const selection::TokenIndex& id = table.rows.index[row];
    out << id.sample << ',' << id.rollout << ',' << id.position << ','
        << selection::scoreFieldName(field) << ',';
    detail::writeNumber(out, scores[row]);
    out << '\n';
  }
}

}  // namespace tor::analysis
