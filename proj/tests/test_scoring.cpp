#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tor/rng.hpp"
#include "tor/scoring.hpp"

using tor::scoring::rankCorrelation;
using tor::scoring::shannonEntropy;
using tor::scoring::tokenEntropy;
using tor::scoring::visualSensitivity;

namespace {

std::vector<double> randomDistribution(int size, tor::rng::Stream& rng) {
  std::vector<double> probs(size);
  double total = 0.0;
  for (double& v : probs) {
    v = -std::log(1.0 - rng.nextUnit());  // exponential, so sums are stable
    total += v;
  }
  for (double& v : probs) {
    v /= total;
  }
  return probs;
}

}  // namespace

TEST_CASE("top-p entropy on frozen two-token cases") {
  std::vector<double> oneHot = {1.0, 0.0};
  CHECK(tokenEntropy(oneHot, 0.5) == 0.0);
  CHECK(tokenEntropy(oneHot, 1.0) == 0.0);

  std::vector<double> uniform = {0.5, 0.5};
  CHECK_THAT(tokenEntropy(uniform, 0.95),
             Catch::Matchers::WithinAbs(0.6931471805599453, 1e-15));

  // Cumulative mass 0.9 < 0.95, so both tokens join the nucleus.
  std::vector<double> skewed = {0.9, 0.1};
  CHECK_THAT(tokenEntropy(skewed, 0.95),
             Catch::Matchers::WithinAbs(0.32508297339144826, 1e-15));
  // p=0.5: the top token alone reaches the mass.
  CHECK_THAT(tokenEntropy(skewed, 0.5),
             Catch::Matchers::WithinAbs(-0.9 * std::log(0.9), 1e-15));
}

TEST_CASE("top-p entropy at p=1 equals full Shannon entropy") {
  tor::rng::Stream rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> probs = randomDistribution(2 + rng.nextInt(63), rng);
    double brute = 0.0;
    for (double q : probs) {
      if (q > 0.0) {
        brute -= q * std::log(q);
      }
    }
    REQUIRE_THAT(tokenEntropy(probs, 1.0), Catch::Matchers::WithinAbs(brute, 1e-12));
  }
}

TEST_CASE("top-p entropy is monotonically non-decreasing in p") {
  tor::rng::Stream rng(8);
  std::vector<double> grid = {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 1.0};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> probs = randomDistribution(2 + rng.nextInt(30), rng);
    double previous = 0.0;
    for (double p : grid) {
      double h = tokenEntropy(probs, p);
      REQUIRE(h >= previous - 1e-15);
      previous = h;
    }
  }
}

TEST_CASE("renormalized nucleus entropy normalizes before summing") {
  std::vector<double> skewed = {0.9, 0.1};
  // p=0.5 keeps only the 0.9 token; renormalized it becomes certain.
  CHECK(tokenEntropy(skewed, 0.5, true) == 0.0);
  double h = tokenEntropy(skewed, 0.95, true);
  CHECK_THAT(h, Catch::Matchers::WithinAbs(-(0.9 * std::log(0.9) + 0.1 * std::log(0.1)), 1e-15));
}

TEST_CASE("top-p entropy validates its inputs") {
  std::vector<double> uniform = {0.5, 0.5};
  CHECK_THROWS_AS(tokenEntropy(uniform, 0.0), tor::UsageError);
  CHECK_THROWS_AS(tokenEntropy(uniform, 1.5), tor::UsageError);
  std::vector<double> unnormalized = {0.5, 0.6};
  CHECK_THROWS_AS(tokenEntropy(unnormalized, 0.9), tor::UsageError);
}

TEST_CASE("visual sensitivity is a symmetric absolute difference") {
  CHECK(visualSensitivity(-1.0, -1.0) == 0.0);
  CHECK(visualSensitivity(-1.0, -3.0) == 2.0);
  CHECK(visualSensitivity(-3.0, -1.0) == 2.0);
}

TEST_CASE("rank correlation on frozen cases") {
  std::vector<double> base = {1, 2, 3, 4};
  std::vector<double> swapped = {1, 3, 2, 4};
  CHECK_THAT(rankCorrelation(base, swapped), Catch::Matchers::WithinAbs(0.8, 1e-15));

  std::vector<double> reversed = {4, 3, 2, 1};
  CHECK_THAT(rankCorrelation(base, base), Catch::Matchers::WithinAbs(1.0, 1e-15));
  CHECK_THAT(rankCorrelation(base, reversed), Catch::Matchers::WithinAbs(-1.0, 1e-15));

  // Tied pair shares rank 1.5; Pearson over ranks gives sqrt(3)/2.
  std::vector<double> tied = {1, 1, 2};
  std::vector<double> rising = {1, 2, 3};
  CHECK_THAT(rankCorrelation(tied, rising),
             Catch::Matchers::WithinAbs(0.8660254037844387, 1e-15));
}

TEST_CASE("rank correlation rejects degenerate inputs") {
  std::vector<double> constant = {2, 2, 2};
  std::vector<double> rising = {1, 2, 3};
  CHECK_THROWS_AS(rankCorrelation(constant, rising), tor::UndefinedCorrelationError);
  CHECK_THROWS_AS(rankCorrelation(rising, constant), tor::UndefinedCorrelationError);
  std::vector<double> one = {1};
  CHECK_THROWS_AS(rankCorrelation(one, one), tor::UsageError);
  std::vector<double> two = {1, 2};
  std::vector<double> three = {1, 2, 3};
  CHECK_THROWS_AS(rankCorrelation(two, three), tor::UsageError);
}

TEST_CASE("rank correlation is invariant under monotone transforms") {
  tor::rng::Stream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[i] = rng.nextUnit();
      b[i] = rng.nextUnit();
    }
    double rho = rankCorrelation(a, b);
    std::vector<double> stretched(a);
    for (double& v : stretched) {
      v = std::exp(3.0 * v) + 5.0;
    }
    REQUIRE_THAT(rankCorrelation(stretched, b), Catch::Matchers::WithinAbs(rho, 1e-12));
  }
}

TEST_CASE("shannon entropy skips zero probabilities") {
  std::vector<double> withZeros = {0.5, 0.0, 0.5, 0.0};
  CHECK_THAT(shannonEntropy(withZeros), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
}
