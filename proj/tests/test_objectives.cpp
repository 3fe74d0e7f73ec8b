#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tor/objectives.hpp"
#include "tor/rng.hpp"

using namespace tor::objectives;

namespace {

// Formula-level re-implementations used as oracles: every quantity is spelled
// out inline so a transcription slip in the library cannot hide here too.
double sequenceMeanOracle(const std::vector<RolloutTerms>& rollouts, double epsilon,
                          double beta, bool weighted) {
  double total = 0.0;
  for (const RolloutTerms& r : rollouts) {
    double inner = 0.0;
    for (std::size_t t = 0; t < r.logpNew.size(); ++t) {
      double ratio = std::exp(r.logpNew[t] - r.logpOld[t]);
      double banded = ratio;
      if (banded < 1.0 - epsilon) banded = 1.0 - epsilon;
      if (banded > 1.0 + epsilon) banded = 1.0 + epsilon;
      double term = std::min(ratio * r.advantage, banded * r.advantage);
      if (weighted) {
        term = r.weights[t] * term;
      }
      if (beta > 0.0) {
        double d = r.logpRef[t] - r.logpNew[t];
        term -= beta * (std::exp(d) - d - 1.0);
      }
      inner += term;
    }
    total += inner / static_cast<double>(r.logpNew.size());
  }
  return total / static_cast<double>(rollouts.size());
}

double tokenLevelOracle(const std::vector<RolloutTerms>& rollouts, double epsilonLow,
                        double epsilonHigh, bool weighted) {
  double numerator = 0.0;
  double tokens = 0.0;
  for (const RolloutTerms& r : rollouts) {
    for (std::size_t t = 0; t < r.logpNew.size(); ++t) {
      double ratio = std::exp(r.logpNew[t] - r.logpOld[t]);
      double banded = ratio;
      if (banded < 1.0 - epsilonLow) banded = 1.0 - epsilonLow;
      if (banded > 1.0 + epsilonHigh) banded = 1.0 + epsilonHigh;
      double term = std::min(ratio * r.advantage, banded * r.advantage);
      numerator += weighted ? r.weights[t] * term : term;
    }
    tokens += static_cast<double>(r.logpNew.size());
  }
  return numerator / tokens;
}

std::vector<RolloutTerms> randomInstance(tor::rng::Stream& rng, bool withRef, bool withWeights,
                                         int maxRollouts = 6, int maxLen = 5) {
  int count = 1 + rng.nextInt(maxRollouts);
  std::vector<RolloutTerms> rollouts(count);
  for (RolloutTerms& r : rollouts) {
    int length = 1 + rng.nextInt(maxLen);
    for (int t = 0; t < length; ++t) {
      r.logpNew.push_back(-3.0 * rng.nextUnit() - 0.05);
      r.logpOld.push_back(-3.0 * rng.nextUnit() - 0.05);
      if (withRef) {
        r.logpRef.push_back(-3.0 * rng.nextUnit() - 0.05);
      }
      if (withWeights) {
        double pickWeight = rng.nextUnit();
        r.weights.push_back(pickWeight < 0.3 ? 0.0 : (pickWeight < 0.6 ? 0.5 : 1.0));
      }
    }
    r.advantage = 3.0 * (rng.nextUnit() - 0.5);
  }
  return rollouts;
}

}  // namespace

TEST_CASE("group advantages standardize rewards") {
  std::vector<double> rewards = {1.0, 0.0, 0.0, 0.0};
  GroupAdvantages result = groupAdvantage(rewards, 1e-12);
  CHECK_THAT(result.rewardMean, Catch::Matchers::WithinAbs(0.25, 1e-15));
  CHECK_THAT(result.rewardStd, Catch::Matchers::WithinAbs(0.4330127018922193, 1e-15));
  REQUIRE(result.advantages.size() == 4);
  CHECK_THAT(result.advantages[0], Catch::Matchers::WithinAbs(1.7320508075688772, 1e-9));
  for (int i = 1; i < 4; ++i) {
    CHECK_THAT(result.advantages[i], Catch::Matchers::WithinAbs(-0.5773502691896258, 1e-9));
  }

  GroupAdvantages pair = groupAdvantage(std::vector<double>{1.0, 0.0}, 1e-12);
  CHECK_THAT(pair.advantages[0], Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THAT(pair.advantages[1], Catch::Matchers::WithinAbs(-1.0, 1e-9));

  GroupAdvantages flat = groupAdvantage(std::vector<double>{1.0, 1.0, 1.0}, 1e-12);
  for (double a : flat.advantages) {
    CHECK(a == 0.0);
  }

  GroupAdvantages sampled = groupAdvantage(rewards, 1e-12, true);
  CHECK_THAT(sampled.advantages[0], Catch::Matchers::WithinAbs(1.5, 1e-9));
  CHECK_THAT(sampled.advantages[1], Catch::Matchers::WithinAbs(-0.5, 1e-9));

  CHECK_THROWS_AS(groupAdvantage(std::vector<double>{1.0}, 1e-12), tor::UsageError);
}

TEST_CASE("standardized advantages have zero mean and unit spread") {
  tor::rng::Stream rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    int g = 2 + rng.nextInt(15);
    std::vector<double> rewards(g);
    for (double& r : rewards) {
      r = rng.nextInt(2);
    }
    GroupAdvantages result = groupAdvantage(rewards, 1e-12);
    double mean = std::accumulate(result.advantages.begin(), result.advantages.end(), 0.0) /
                  static_cast<double>(g);
    REQUIRE(std::abs(mean) < 1e-12);
    if (hasRewardVariance(rewards)) {
      double variance = 0.0;
      for (double a : result.advantages) {
        variance += (a - mean) * (a - mean);
      }
      double spread = std::sqrt(variance / static_cast<double>(g));
      REQUIRE(std::abs(spread - 1.0) < 1e-9);
    } else {
      for (double a : result.advantages) {
        REQUIRE(a == 0.0);
      }
    }
  }
}

TEST_CASE("importance ratios are exponentials of log differences") {
  CHECK(importanceRatio(-1.5, -1.5) == 1.0);
  CHECK_THAT(importanceRatio(-1.0 + std::log(2.0), -1.0),
             Catch::Matchers::WithinAbs(2.0, 1e-12));
  tor::rng::Stream rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    double a = -5.0 * rng.nextUnit();
    double b = -5.0 * rng.nextUnit();
    REQUIRE_THAT(importanceRatio(a, b), Catch::Matchers::WithinAbs(std::exp(a - b), 1e-12));
  }
}

TEST_CASE("clipped terms obey min semantics") {
  CHECK_THAT(clippedTerm(1.5, 1.0, 0.2, 0.2), Catch::Matchers::WithinAbs(1.2, 1e-15));
  CHECK_THAT(clippedTerm(0.5, -1.0, 0.2, 0.2), Catch::Matchers::WithinAbs(-0.8, 1e-15));
  CHECK(clippedTerm(1.1, 2.5, 0.2, 0.28) == 1.1 * 2.5);

  tor::rng::Stream rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    double ratio = 2.0 * rng.nextUnit();
    double advantage = 4.0 * (rng.nextUnit() - 0.5);
    double term = clippedTerm(ratio, advantage, 0.2, 0.28);
    double banded = std::clamp(ratio, 0.8, 1.28) * advantage;
    REQUIRE(term <= ratio * advantage);
    REQUIRE(term <= banded);
    REQUIRE((term == ratio * advantage || term == banded));
  }
}

TEST_CASE("kl penalty is a nonnegative unbiased divergence estimate") {
  CHECK(klPenalty(-0.7, -0.7) == 0.0);
  tor::rng::Stream rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    REQUIRE(klPenalty(-4.0 * rng.nextUnit(), -4.0 * rng.nextUnit()) >= 0.0);
  }

  std::vector<double> p = {0.5, 0.3, 0.2};
  std::vector<double> ref = {0.2, 0.5, 0.3};
  double exact = 0.0;
  for (int k = 0; k < 3; ++k) {
    exact += p[k] * std::log(p[k] / ref[k]);
  }
  double estimate = 0.0;
  int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    double u = rng.nextUnit();
    int token = u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
    estimate += klPenalty(std::log(p[token]), std::log(ref[token]));
  }
  estimate /= draws;
  CHECK_THAT(estimate, Catch::Matchers::WithinAbs(exact, 0.005));
}

TEST_CASE("zero-variance groups are filtered out") {
  std::vector<std::vector<double>> groups = {
      {1.0, 1.0, 1.0, 1.0}, {1.0, 0.0, 1.0, 0.0}, {0.0, 0.0}, {0.0, 1.0},
      {1.0, 1.0},           {0.5, 0.5, 0.5},      {1.0, 0.0}, {0.0, 0.0, 1.0}};
  std::vector<std::size_t> retained = dynamicSampleFilter(groups);
  CHECK(retained == std::vector<std::size_t>{1, 3, 6, 7});
}

TEST_CASE("sequence-mean objective reduces to mean advantage at ratio one") {
  ObjectiveConfig config;
  config.beta = 0.0;
  std::vector<RolloutTerms> rollouts(4);
  std::vector<double> advantages = {1.2, -0.4, 0.3, -1.1};
  tor::rng::Stream rng(23);
  for (int i = 0; i < 4; ++i) {
    int length = 1 + rng.nextInt(4);
    for (int t = 0; t < length; ++t) {
      double logp = -2.0 * rng.nextUnit() - 0.1;
      rollouts[i].logpNew.push_back(logp);
      rollouts[i].logpOld.push_back(logp);
    }
    rollouts[i].advantage = advantages[i];
  }
  double expected = std::accumulate(advantages.begin(), advantages.end(), 0.0) / 4.0;
  CHECK_THAT(grpoLoss(rollouts, config), Catch::Matchers::WithinAbs(expected, 1e-12));

  for (RolloutTerms& r : rollouts) {
    r.advantage = 0.0;
  }
  CHECK(grpoLoss(rollouts, config) == 0.0);
}

TEST_CASE("straight-line transcriptions agree with the losses") {
  tor::rng::Stream rng(29);
  ObjectiveConfig grpoConfig;
  ObjectiveConfig dapoConfig = ObjectiveConfig::forAlgorithm(Algorithm::dapo);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RolloutTerms> plain = randomInstance(rng, true, false);
    REQUIRE_THAT(grpoLoss(plain, grpoConfig),
                 Catch::Matchers::WithinAbs(
                     sequenceMeanOracle(plain, grpoConfig.epsilon, grpoConfig.beta, false),
                     1e-10));
    for (RolloutTerms& r : plain) {
      r.logpRef.clear();
    }
    REQUIRE_THAT(dapoLoss(plain, dapoConfig),
                 Catch::Matchers::WithinAbs(
                     tokenLevelOracle(plain, dapoConfig.epsilonLow, dapoConfig.epsilonHigh,
                                      false),
                     1e-10));

    std::vector<RolloutTerms> masked = randomInstance(rng, true, true);
    REQUIRE_THAT(torGrpoLoss(masked, grpoConfig),
                 Catch::Matchers::WithinAbs(
                     sequenceMeanOracle(masked, grpoConfig.epsilon, grpoConfig.beta, true),
                     1e-10));
    for (RolloutTerms& r : masked) {
      r.logpRef.clear();
    }
    REQUIRE_THAT(torDapoLoss(masked, dapoConfig),
                 Catch::Matchers::WithinAbs(
                     tokenLevelOracle(masked, dapoConfig.epsilonLow, dapoConfig.epsilonHigh,
                                      true),
                     1e-10));
  }
}

TEST_CASE("token-level aggregation weights long rollouts more") {
  ObjectiveConfig config = ObjectiveConfig::forAlgorithm(Algorithm::dapo);
  RolloutTerms shortOne;
  shortOne.logpNew = {-1.0};
  shortOne.logpOld = {-1.0};
  shortOne.advantage = 1.0;
  RolloutTerms longOne;
  longOne.logpNew = {-1.0, -0.5, -2.0};
  longOne.logpOld = {-1.0, -0.5, -2.0};
  longOne.advantage = -1.0;
  CHECK_THAT(dapoLoss({shortOne, longOne}, config), Catch::Matchers::WithinAbs(-0.5, 1e-15));

  RolloutTerms single;
  single.logpNew = {-0.9};
  single.logpOld = {-0.9};
  single.advantage = 0.7;
  CHECK_THAT(dapoLoss({single}, config), Catch::Matchers::WithinAbs(0.7, 1e-15));

  ObjectiveConfig meanConfig;
  meanConfig.beta = 0.0;
  RolloutTerms other = shortOne;
  other.advantage = -1.0;
  CHECK_THAT(grpoLoss({shortOne, other}, meanConfig), Catch::Matchers::WithinAbs(0.0, 1e-15));

  RolloutTerms stretched = other;
  stretched.logpNew = {-1.0, -1.0};
  stretched.logpOld = {-1.0, -1.0};
  CHECK_THAT(grpoLoss({shortOne, stretched}, meanConfig),
             Catch::Matchers::WithinAbs(0.0, 1e-15));
  ObjectiveConfig tokenConfig = ObjectiveConfig::forAlgorithm(Algorithm::dapo);
  CHECK(dapoLoss({shortOne, stretched}, tokenConfig) != 0.0);
}

TEST_CASE("all-ones masks reduce reweighted objectives to their bases") {
  tor::rng::Stream rng(31);
  ObjectiveConfig meanConfig;
  ObjectiveConfig tokenConfig = ObjectiveConfig::forAlgorithm(Algorithm::dapo);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RolloutTerms> rollouts = randomInstance(rng, true, false);
    std::vector<RolloutTerms> ones = rollouts;
    for (RolloutTerms& r : ones) {
      r.weights.assign(r.logpNew.size(), 1.0);
    }
    double base = grpoLoss(rollouts, meanConfig);
    double reweighted = torGrpoLoss(ones, meanConfig);
    REQUIRE_THAT(reweighted, Catch::Matchers::WithinRel(base, 1e-12));

    for (RolloutTerms& r : rollouts) {
      r.logpRef.clear();
    }
    for (RolloutTerms& r : ones) {
      r.logpRef.clear();
    }
    double tokenBase = dapoLoss(rollouts, tokenConfig);
    double tokenReweighted = torDapoLoss(ones, tokenConfig);
    REQUIRE_THAT(tokenReweighted, Catch::Matchers::WithinRel(tokenBase, 1e-12));
  }
}

TEST_CASE("masks act linearly on individual token weights") {
  ObjectiveConfig config;
  config.beta = 0.01;
  tor::rng::Stream rng(37);
  std::vector<RolloutTerms> rollouts = randomInstance(rng, true, true, 4, 4);
  auto valueWithWeight = [&](double w) {
    std::vector<RolloutTerms> copy = rollouts;
    copy[0].weights[0] = w;
    return torGrpoLoss(copy, config);
  };
  double atZero = valueWithWeight(0.0);
  double atHalf = valueWithWeight(0.5);
  double atOne = valueWithWeight(1.0);
  CHECK_THAT(atHalf, Catch::Matchers::WithinAbs((atZero + atOne) / 2.0, 1e-12));

  config.beta = 0.0;
  std::vector<RolloutTerms> lone(1);
  lone[0].logpNew = {-0.4};
  lone[0].logpOld = {-0.6};
  lone[0].advantage = 1.3;
  lone[0].weights = {1.0};
  double full = torGrpoLoss(lone, config);
  lone[0].weights = {0.5};
  CHECK_THAT(torGrpoLoss(lone, config), Catch::Matchers::WithinAbs(full / 2.0, 1e-15));
  lone[0].weights = {0.0};
  CHECK(torGrpoLoss(lone, config) == 0.0);
}

TEST_CASE("a fully masked rollout still counts toward the normalizer") {
  ObjectiveConfig config = ObjectiveConfig::forAlgorithm(Algorithm::torDapo);
  RolloutTerms muted;
  muted.logpNew = {-1.0, -1.2};
  muted.logpOld = {-1.0, -1.2};
  muted.weights = {0.0, 0.0};
  muted.advantage = 1.0;
  RolloutTerms live;
  live.logpNew = {-0.8, -0.8};
  live.logpOld = {-0.8, -0.8};
  live.weights = {1.0, 1.0};
  live.advantage = 1.0;
  CHECK_THAT(torDapoLoss({muted, live}, config), Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("rewards come from answer verification") {
  tor::task::TaskConfig taskConfig;
  taskConfig.gridHeight = 2;
  taskConfig.gridWidth = 2;
  taskConfig.alphabetSize = 3;
  tor::task::Vocabulary vocab{taskConfig.alphabetSize};
  tor::policy::RolloutBatch batch;
  batch.samples = {tor::task::generateSample(12, taskConfig)};
  tor::policy::RolloutRecord correct;
  correct.tokens = tor::task::renderGoldResponse(batch.samples[0], vocab);
  tor::policy::RolloutRecord wrong;
  wrong.tokens = {tor::task::Vocabulary::answerStart, tor::task::Vocabulary::digitBase + 9,
                  tor::task::Vocabulary::answerEnd, tor::task::Vocabulary::eos};
  tor::policy::RolloutRecord truncated;
  truncated.tokens = {tor::task::Vocabulary::answerStart, tor::task::Vocabulary::digitBase + 1};
  batch.rollouts = {{correct, wrong, truncated}};
  std::vector<std::vector<double>> rewards = computeRewards(batch, vocab);
  REQUIRE(rewards.size() == 1);
  CHECK(rewards[0] == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("objective preconditions are enforced") {
  ObjectiveConfig meanConfig;
  ObjectiveConfig tokenConfig = ObjectiveConfig::forAlgorithm(Algorithm::dapo);

  CHECK_THROWS_AS(dapoLoss({}, tokenConfig), tor::DegenerateBatchError);
  CHECK_THROWS_AS(torDapoLoss({}, tokenConfig), tor::DegenerateBatchError);
  CHECK_THROWS_AS(grpoLoss({}, meanConfig), tor::UsageError);

  RolloutTerms misaligned;
  misaligned.logpNew = {-1.0, -1.0};
  misaligned.logpOld = {-1.0};
  misaligned.advantage = 1.0;
  CHECK_THROWS_AS(dapoLoss({misaligned}, tokenConfig), tor::UsageError);

  RolloutTerms plain;
  plain.logpNew = {-1.0};
  plain.logpOld = {-1.0};
  plain.advantage = 1.0;
  CHECK_THROWS_AS(grpoLoss({plain}, meanConfig), tor::UsageError);  // beta > 0, no logpRef
  CHECK_THROWS_AS(torGrpoLoss({plain}, meanConfig), tor::UsageError);  // missing weights
  plain.weights = {1.0};
  CHECK_THROWS_AS(dapoLoss({plain}, tokenConfig), tor::UsageError);  // unexpected weights

  CHECK_THROWS_AS(grpoLoss({plain}, tokenConfig), tor::UsageError);  // wrong aggregation
  CHECK_THROWS_AS(dapoLoss({plain}, meanConfig), tor::UsageError);

  ObjectiveConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), tor::ConfigError);
  bad = ObjectiveConfig{};
  bad.beta = -0.1;
  CHECK_THROWS_AS(bad.validate(), tor::ConfigError);
  bad = ObjectiveConfig{};
  bad.advantageEpsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), tor::ConfigError);
  bad = ObjectiveConfig{};
  bad.epsilonLow = 1.0;
  CHECK_THROWS_AS(bad.validate(), tor::ConfigError);
}

TEST_CASE("graph objectives equal their scalar counterparts") {
  tor::rng::Stream rng(41);
  for (Algorithm algorithm : {Algorithm::grpo, Algorithm::dapo, Algorithm::torGrpo,
                              Algorithm::torDapo}) {
    ObjectiveConfig config = ObjectiveConfig::forAlgorithm(algorithm);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<RolloutTerms> rollouts =
          randomInstance(rng, !isTokenLevel(algorithm) && config.beta > 0.0,
                         isWeighted(algorithm), 4, 4);
      double scalarValue = objectiveValue(algorithm, rollouts, config);

      tor::diff::Graph graph;
      std::vector<RolloutGraphTerms> graphRollouts;
      tor::diff::Inputs inputs;
      std::vector<tor::diff::Tensor> holders;
      holders.reserve(rollouts.size());
      for (std::size_t i = 0; i < rollouts.size(); ++i) {
        holders.push_back(tor::diff::Tensor::rowVector(rollouts[i].logpNew));
      }
      for (std::size_t i = 0; i < rollouts.size(); ++i) {
        RolloutGraphTerms terms;
        std::string name = "logp" + std::to_string(i);
        terms.logpNew = graph.input(name, 1, static_cast<int>(rollouts[i].logpNew.size()));
        terms.logpOld = rollouts[i].logpOld;
        terms.logpRef = rollouts[i].logpRef;
        terms.weights = rollouts[i].weights;
        terms.advantage = rollouts[i].advantage;
        graphRollouts.push_back(terms);
        inputs[name] = &holders[i];
      }
      tor::diff::NodeId objective =
          buildObjectiveNode(graph, algorithm, graphRollouts, config);
      graph.setOutput(objective);
      tor::diff::Tensor value = graph.evaluate(inputs);
      REQUIRE_THAT(value.item(), Catch::Matchers::WithinAbs(scalarValue, 1e-12));

      if (trial == 0) {
        tor::diff::FdCheckReport report = tor::diff::finiteDifferenceCheck(graph, inputs);
        REQUIRE(report.pass);
        REQUIRE(report.maxRelError <= 1e-4);
      }
    }
  }
}

TEST_CASE("per-step breakdown reports ratio and clip statistics") {
  ObjectiveConfig config;
  config.beta = 0.0;
  RolloutTerms r;
  r.logpNew = {-1.0, -1.0 + std::log(1.5)};
  r.logpOld = {-1.0, -1.0};
  r.advantage = 1.0;
  ObjectiveBreakdown stats = decompose(Algorithm::grpo, {r}, config);
  CHECK_THAT(stats.meanRatio, Catch::Matchers::WithinAbs(1.25, 1e-12));
  CHECK_THAT(stats.clipFraction, Catch::Matchers::WithinAbs(0.5, 1e-15));
  CHECK(stats.klTerm == 0.0);
  CHECK(stats.maskedTokenFraction == 0.0);
  CHECK_THAT(stats.objective, Catch::Matchers::WithinAbs((1.0 + 1.2) / 2.0, 1e-12));

  RolloutTerms masked = r;
  masked.weights = {0.0, 1.0};
  ObjectiveBreakdown maskedStats = decompose(Algorithm::torGrpo, {masked}, config);
  CHECK_THAT(maskedStats.maskedTokenFraction, Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("algorithm defaults follow their aggregation family") {
  ObjectiveConfig grpoDefaults = ObjectiveConfig::forAlgorithm(Algorithm::grpo);
  CHECK(grpoDefaults.beta == 0.01);
  CHECK(grpoDefaults.aggregation == Aggregation::sequenceMean);
  ObjectiveConfig dapoDefaults = ObjectiveConfig::forAlgorithm(Algorithm::dapo);
  CHECK(dapoDefaults.beta == 0.0);
  CHECK(dapoDefaults.aggregation == Aggregation::tokenLevel);
  ObjectiveConfig torDefaults = ObjectiveConfig::forAlgorithm(Algorithm::torGrpo);
  CHECK(torDefaults.beta == 0.01);
  CHECK(torDefaults.aggregation == Aggregation::sequenceMean);

  CHECK(algorithmFromName("tor-dapo") == Algorithm::torDapo);
  CHECK(algorithmName(Algorithm::torGrpo) == "tor-grpo");
  CHECK_THROWS_AS(algorithmFromName("ppo"), tor::ConfigError);
}
