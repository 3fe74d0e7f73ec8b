#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "tor/score_table.hpp"

using namespace tor::scoring;
using tor::policy::PolicyConfig;
using tor::policy::PolicyParams;
using tor::policy::RolloutBatch;

namespace {

tor::task::TaskConfig tinyTask() {
  tor::task::TaskConfig config;
  config.gridHeight = 2;
  config.gridWidth = 2;
  config.alphabetSize = 3;
  return config;
}

PolicyConfig tinyPolicy() {
  PolicyConfig config = PolicyConfig::forTask(tinyTask());
  config.embedDim = 8;
  config.numBlocks = 2;
  config.ffnMult = 2;
  config.maxTextLen = 16;
  return config;
}

RolloutBatch sampleBatch(const PolicyParams& params, int sampleCount, int groupSize,
                         std::uint64_t seed) {
  std::vector<tor::task::SyntheticSample> samples;
  for (int s = 0; s < sampleCount; ++s) {
    samples.push_back(tor::task::generateSample(seed * 100 + s, tinyTask()));
  }
  return tor::policy::sampleRollouts(params, samples, groupSize, 0.95, 6, seed);
}

}  // namespace

TEST_CASE("the table has one row per token in batch order") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 3);
  RolloutBatch batch = sampleBatch(params, 2, 3, 11);
  TokenScoreTable table = buildScoreTable(batch, params);

  std::size_t expected = 0;
  for (const auto& group : batch.rollouts) {
    for (const auto& record : group) {
      expected += record.tokens.size();
    }
  }
  REQUIRE(table.size() == expected);
  CHECK(table.token.size() == expected);
  CHECK(table.probDiff.empty());
  CHECK(table.entropyDiff.empty());
  CHECK(table.attentionMass.empty());

  std::size_t row = 0;
  for (int b = 0; b < batch.sampleCount(); ++b) {
    for (int i = 0; i < batch.groupSize(); ++i) {
      const tor::policy::RolloutRecord& record = batch.rollouts[b][i];
      for (int t = 0; t < record.length(); ++t, ++row) {
        REQUIRE(table.rows.index[row] == tor::selection::TokenIndex{b, i, t});
        REQUIRE(table.token[row] == record.tokens[t]);
        REQUIRE(table.rows.entropy[row] == record.topPEntropy[t]);
        REQUIRE(table.rows.sensitivity[row] >= 0.0);
      }
    }
  }
}

TEST_CASE("a zeroed image pathway yields zero sensitivities") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 5);
  std::fill(params.cellEmbedding.values().begin(), params.cellEmbedding.values().end(), 0.0);
  RolloutBatch batch = sampleBatch(params, 2, 2, 13);
  TokenScoreTable table = buildScoreTable(batch, params);
  for (double s : table.rows.sensitivity) {
    REQUIRE(s == 0.0);
  }
}

TEST_CASE("building the table twice gives bitwise identical results") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 7);
  RolloutBatch batch = sampleBatch(params, 2, 2, 17);
  TokenScoreTable first = buildScoreTable(batch, params, ProxyOptions::all());
  for (const auto& group : batch.rollouts) {
    for (const auto& record : group) {
      REQUIRE(record.logProbPlaceholder.size() == record.tokens.size());
    }
  }
  TokenScoreTable second = buildScoreTable(batch, params, ProxyOptions::all());
  CHECK(first == second);
}

TEST_CASE("proxy columns follow their definitions") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 9);
  RolloutBatch batch = sampleBatch(params, 2, 2, 19);
  TokenScoreTable table = buildScoreTable(batch, params, ProxyOptions::all());
  REQUIRE(table.probDiff.size() == table.size());
  REQUIRE(table.entropyDiff.size() == table.size());
  REQUIRE(table.attentionMass.size() == table.size());

  std::size_t row = 0;
  for (int b = 0; b < batch.sampleCount(); ++b) {
    for (int i = 0; i < batch.groupSize(); ++i) {
      const tor::policy::RolloutRecord& record = batch.rollouts[b][i];
      for (int t = 0; t < record.length(); ++t, ++row) {
        double expected = std::abs(std::exp(record.logProbWithImage[t]) -
                                   std::exp(record.logProbPlaceholder[t]));
        REQUIRE(table.probDiff[row] == expected);
        REQUIRE(table.entropyDiff[row] >= 0.0);
        REQUIRE(table.attentionMass[row] >= 0.0);
        REQUIRE(table.attentionMass[row] <= 1.0);
      }
    }
  }
}

TEST_CASE("stale parameters are rejected") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 11);
  RolloutBatch batch = sampleBatch(params, 1, 2, 23);
  params.versionTag += 1;
  CHECK_THROWS_AS(buildScoreTable(batch, params), tor::StalenessError);
}

TEST_CASE("csv export writes all columns") {
  PolicyParams params = PolicyParams::initialize(tinyPolicy(), 13);
  RolloutBatch batch = sampleBatch(params, 1, 2, 29);

  TokenScoreTable plain = buildScoreTable(batch, params);
  std::ostringstream bare;
  writeScoreTableCsv(plain, bare);
  std::istringstream lines(bare.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "b,i,t,token,entropy,sensitivity,probDiff,entropyDiff,attentionMass");
  std::string first;
  std::getline(lines, first);
  CHECK(first.substr(0, 6) == "0,0,0,");
  CHECK(first.substr(first.size() - 2) == ",,");  // proxies not requested

  TokenScoreTable full = buildScoreTable(batch, params, ProxyOptions::all());
  std::ostringstream rich;
  writeScoreTableCsv(full, rich);
  std::istringstream richLines(rich.str());
  std::getline(richLines, header);
  std::size_t rowCount = 0;
  std::string line;
  while (std::getline(richLines, line)) {
    rowCount += 1;
    REQUIRE(std::count(line.begin(), line.end(), ',') == 8);
    REQUIRE(line.back() != ',');
  }
  CHECK(rowCount == full.size());
}
