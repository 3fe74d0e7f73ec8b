#pragma once

// Assembles the per-token score table for a rollout batch: reasoning scores
// (top-p entropies recorded at sampling time), perception scores (absolute
// log-prob shift when the grid is blanked), and optional analysis proxies.
// Rows are emitted in (b, i, t) order.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <vector>

#include "tor/errors.hpp"
#include "tor/policy.hpp"
#include "tor/scoring.hpp"
#include "tor/selection.hpp"

namespace tor::scoring {

struct ProxyOptions {
  bool probDiff = false;
  bool entropyDiff = false;
  bool attentionMass = false;

  // entropyDiff and attentionMass read full distributions and attention rows,
  // which need the detailed scoring pass under both image conditions.
  bool needDetailedPass() const { return entropyDiff || attentionMass; }

  static ProxyOptions all() { return {true, true, true}; }
};

struct TokenScoreTable {
  selection::ScoreRows rows;
  std::vector<int> token;
  std::vector<double> probDiff;
  std::vector<double> entropyDiff;
  std::vector<double> attentionMass;

  std::size_t size() const { return rows.size(); }

  bool operator==(const TokenScoreTable&) const = default;
};

// Fills one row per token of the batch. Entropies are the values captured
// while sampling (behavior policy); sensitivities come from re-scoring each
// rollout against the blanked grid, cached on the record so repeated tables
// over the same batch cost one placeholder pass.
inline TokenScoreTable buildScoreTable(policy::RolloutBatch& batch,
                                       const policy::PolicyParams& params,
                                       const ProxyOptions& proxies = {}) {
  policy::requireFresh(batch, params);
  TokenScoreTable table;
  for (std::size_t b = 0; b < batch.rollouts.size(); ++b) {
    for (std::size_t i = 0; i < batch.rollouts[b].size(); ++i) {
      policy::RolloutRecord& record = batch.rollouts[b][i];
      if (record.logProbPlaceholder.size() != record.tokens.size()) {
        record.logProbPlaceholder = policy::scoreUnderCondition(
            params, batch.samples[b], record, policy::ImageCondition::placeholder);
      }
      policy::DetailedScore with;
      policy::DetailedScore without;
      if (proxies.needDetailedPass()) {
        with = policy::scoreDetailed(params, batch.samples[b], record,
                                     policy::ImageCondition::actual);
        without = policy::scoreDetailed(params, batch.samples[b], record,
                                        policy::ImageCondition::placeholder);
      }
      for (int t = 0; t < record.length(); ++t) {
        table.rows.index.push_back(
            {static_cast<int>(b), static_cast<int>(i), t});
        table.token.push_back(record.tokens[t]);
        table.rows.entropy.push_back(record.topPEntropy[t]);
        table.rows.sensitivity.push_back(
            visualSensitivity(record.logProbWithImage[t], record.logProbPlaceholder[t]));
        if (proxies.probDiff) {
          table.probDiff.push_back(std::abs(std::exp(record.logProbWithImage[t]) -
                                            std::exp(record.logProbPlaceholder[t])));
        }
        if (proxies.entropyDiff) {
          table.entropyDiff.push_back(std::abs(with.fullEntropy[t] - without.fullEntropy[t]));
        }
        if (proxies.attentionMass) {
          table.attentionMass.push_back(with.attentionToImage[t]);
        }
      }
    }
  }
  return table;
}

inline void writeScoreTableCsv(const TokenScoreTable& table, std::ostream& out) {
  out << "b,i,t,token,entropy,sensitivity,probDiff,entropyDiff,attentionMass\n";
  char buffer[32];
  auto cell = [&out, &buffer](const std::vector<double>& column, std::size_t row) {
    out << ',';
    if (row < column.size()) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", column[row]);
      out << buffer;
    }
  };
  for (std::size_t row = 0; row < table.size(); ++row) {
    const selection::TokenIndex& id = table.rows.index[row];
    out << id.sample << ',' << id.rollout << ',' << id.position << ',' << table.token[row];
    cell(table.rows.entropy, row);
    cell(table.rows.sensitivity, row);
    cell(table.probDiff, row);
    cell(table.entropyDiff, row);
    cell(table.attentionMass, row);
    out << '\n';
  }
}

inline void writeScoreTableCsv(const TokenScoreTable& table,
                               const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw UsageError("cannot open " + path.string() + " for writing");
  }
  writeScoreTableCsv(table, out);
}

}  // namespace tor::scoring
