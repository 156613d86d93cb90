#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedpb/pacbayes.hpp"
#include "oracles.hpp"

using namespace fedpb;

namespace {

DiagonalGaussian g1(double mean, double stddev) { return DiagonalGaussian({mean}, {stddev}); }

BoundParams example_params() {
  BoundParams bp;
  bp.lambda = 100.0;
  bp.delta = 0.05;
  bp.loss_bound_c = 1.0;
  bp.num_clients = 10;
  bp.samples_per_client = 100;
  return bp;
}

// Grid with |grid| / delta = e, so ln(|grid|/delta) = 1.
BoundParams unit_log_params() {
  BoundParams bp = example_params();
  bp.lambda_grid = {1.0, 2.0};
  bp.delta = 2.0 / std::exp(1.0);
  return bp;
}

}  // namespace

TEST(DiagonalGaussian, RejectsInvalid) {
  EXPECT_THROW(DiagonalGaussian({}, {}), std::invalid_argument);
  EXPECT_THROW(DiagonalGaussian({0.0, 1.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(DiagonalGaussian({0.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(DiagonalGaussian({0.0}, {-1.0}), std::invalid_argument);
}

TEST(Kl, IdentityIsZero) {
  const DiagonalGaussian q({0.3, -2.0, 5.0}, {0.1, 2.0, 7.0});
  EXPECT_EQ(kl_diag_gaussian(q, q), 0.0);
}

TEST(Kl, ClosedFormExamples) {
  // Frozen from a 10^6-draw Monte-Carlo oracle (0.5010 +/- 0.0010 and 0.8038 +/- 0.0021).
  EXPECT_NEAR(kl_diag_gaussian(g1(1, 1), g1(0, 1)), 0.5, 1e-15);
  EXPECT_NEAR(kl_diag_gaussian(g1(0, 2), g1(0, 1)), std::log(0.5) + 2.0 - 0.5, 1e-15);
  EXPECT_NEAR(kl_diag_gaussian(g1(0, 2), g1(0, 1)), 0.806853, 1e-6);
}

TEST(Kl, MatchesMonteCarloOracle) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(0.3, 2.0);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = dim(gen);
    std::vector<double> mq(d), sq(d), mp(d), sp(d);
    for (int i = 0; i < d; ++i) mq[i] = mean(gen), sq[i] = sd(gen), mp[i] = mean(gen), sp[i] = sd(gen);
    const double kl = kl_diag_gaussian(DiagonalGaussian(mq, sq), DiagonalGaussian(mp, sp));
    const auto est = oracle::mc_kl(mq, sq, mp, sp, 200000, gen);
    EXPECT_NEAR(kl, est.mean, 4.0 * est.std_error) << "trial " << trial;
  }
}

TEST(Kl, NonNegativeAndZeroOnlyAtEquality) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> mean(-3.0, 3.0), sd(0.05, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> mq(4), sq(4), mp(4), sp(4);
    for (int i = 0; i < 4; ++i) mq[i] = mean(gen), sq[i] = sd(gen), mp[i] = mean(gen), sp[i] = sd(gen);
    const DiagonalGaussian q(mq, sq), p(mp, sp);
    EXPECT_GT(kl_diag_gaussian(q, p), 1e-12);
    EXPECT_LE(kl_diag_gaussian(q, q), 1e-12);
  }
}

TEST(Kl, DimensionMismatch) {
  EXPECT_THROW(kl_diag_gaussian(g1(0, 1), DiagonalGaussian({0, 0}, {1, 1})), std::invalid_argument);
}

TEST(WeightedKl, Examples) {
  const std::vector<DiagonalGaussian> qs = {g1(1, 1), g1(0, 2)};
  const std::vector<DiagonalGaussian> ps = {g1(0, 1), g1(0, 1)};
  EXPECT_NEAR(weighted_kl(qs, ps, WeightVector({0.5, 0.5})), 0.6534264097200273, 1e-15);
  EXPECT_EQ(weighted_kl(ps, ps, WeightVector({0.5, 0.5})), 0.0);

  const double eps = 1e-9;
  EXPECT_NEAR(weighted_kl(qs, ps, WeightVector({1.0 - eps, eps})), 0.5, 1e-7);
}

TEST(WeightedKl, LengthMismatch) {
  const std::vector<DiagonalGaussian> qs = {g1(1, 1), g1(0, 2)};
  const std::vector<DiagonalGaussian> ps = {g1(0, 1)};
  EXPECT_THROW(weighted_kl(qs, ps, WeightVector({0.5, 0.5})), std::invalid_argument);
}

TEST(WeightVector, Validation) {
  EXPECT_NO_THROW(WeightVector({1.0}));
  EXPECT_THROW(WeightVector({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(WeightVector({1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(WeightVector({}), std::invalid_argument);
}

TEST(BoundParams, Validation) {
  BoundParams bp = example_params();
  EXPECT_NO_THROW(bp.validate());
  bp.delta = 1.0;
  EXPECT_THROW(bp.validate(), std::invalid_argument);
  bp = example_params();
  bp.lambda_grid = {1.0, 1.0};
  EXPECT_THROW(bp.validate(), std::invalid_argument);
  bp = example_params();
  bp.lambda = 0.0;
  EXPECT_THROW(complexity_theorem1(1.0, bp), std::invalid_argument);
}

TEST(FixedLambdaComplexity, Example) {
  // (1 + ln 20)/100 + 100/8000, evaluated independently.
  EXPECT_NEAR(complexity_theorem1(1.0, example_params()), 0.05245732273553991, 1e-15);
}

TEST(FixedLambdaComplexity, BalancedTermsAtSqrt8Kn) {
  BoundParams bp = example_params();
  bp.delta = std::exp(-1.0);
  bp.lambda = std::sqrt(8.0 * 10 * 100);
  EXPECT_NEAR(complexity_theorem1(0.0, bp), 2.0 / std::sqrt(8000.0), 1e-15);
}

TEST(FixedLambdaComplexity, ScalingInKn) {
  BoundParams bp = example_params();
  const double kl = 0.7;
  const double first = (kl + bp.log_inv_delta()) / bp.lambda;
  const double second = complexity_theorem1(kl, bp) - first;
  bp.samples_per_client *= 2;
  EXPECT_NEAR(complexity_theorem1(kl, bp) - first, second / 2.0, 1e-15);
}

TEST(LambdaStar, Examples) {
  EXPECT_NEAR(lambda_star(0.0, unit_log_params()), 89.44271909999159, 1e-12);
  BoundParams bp = unit_log_params();
  bp.loss_bound_c = 2.0;
  EXPECT_NEAR(lambda_star(0.0, bp), 89.44271909999159 / 2.0, 1e-12);
}

TEST(LambdaStar, GridChoiceMinimizesOverGrid) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> kl_dist(0.0, 50.0), c_dist(0.5, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    BoundParams bp = example_params();
    bp.loss_bound_c = c_dist(gen);
    bp.lambda_grid = geometric_grid(0.5, 1.3, 40);
    const double kl = kl_dist(gen);
    const double chosen = lambda_on_grid(kl, bp);
    double best = INFINITY;
    for (double l : bp.lambda_grid) best = std::min(best, complexity_theorem1_union(kl, l, bp));
    EXPECT_EQ(complexity_theorem1_union(kl, chosen, bp), best);
  }
}

TEST(OptimizedComplexity, Example) {
  EXPECT_NEAR(complexity_corollary(0.0, unit_log_params()), 0.022360679774997897, 1e-15);
}

TEST(OptimizedComplexity, EqualsFixedLambdaValueAtLambdaStar) {
  for (double kl : {0.0, 0.3, 5.0, 120.0}) {
    const BoundParams bp = example_params();
    const double ls = lambda_star(kl, bp);
    EXPECT_NEAR(complexity_corollary(kl, bp), complexity_theorem1_union(kl, ls, bp), 1e-12);
  }
}

TEST(OptimizedComplexity, LowerThanEveryGridPoint) {
  const BoundParams bp = example_params();
  for (double kl : {0.0, 2.0, 40.0}) {
    for (double l : bp.lambda_grid) {
      EXPECT_LE(complexity_corollary(kl, bp), complexity_theorem1_union(kl, l, bp) + 1e-15);
    }
  }
}

TEST(Complexity, StrictlyDecreasingInClientsAndSamples) {
  BoundParams bp = example_params();
  double prev_t1 = INFINITY, prev_cor = INFINITY;
  for (std::size_t k : {1, 2, 5, 10, 20, 50, 100}) {
    bp.num_clients = k;
    const double t1 = complexity_theorem1(2.0, bp);
    const double cor = complexity_corollary(2.0, bp);
    EXPECT_LT(t1, prev_t1);
    EXPECT_LT(cor, prev_cor);
    prev_t1 = t1;
    prev_cor = cor;
  }
}

TEST(Complexity, FixedLambdaValueConvexInLambda) {
  const BoundParams bp = example_params();
  const auto& g = bp.lambda_grid;
  for (std::size_t j = 1; j + 1 < g.size(); ++j) {
    // Convexity on a non-uniform grid: the middle value lies below the chord.
    const double t = (g[j] - g[j - 1]) / (g[j + 1] - g[j - 1]);
    const double chord = (1 - t) * complexity_theorem1_union(1.0, g[j - 1], bp) +
                         t * complexity_theorem1_union(1.0, g[j + 1], bp);
    EXPECT_LE(complexity_theorem1_union(1.0, g[j], bp), chord + 1e-12);
  }
}

TEST(BoundCertificate, HoldsWithSmallGap) {
  const auto cert = bound_certificate(0.3, 0.33, 1.0, example_params(), LambdaMode::fixed_lambda);
  EXPECT_NEAR(cert.bound_value, 0.3524573227355399, 1e-15);
  EXPECT_EQ(cert.bound_value, cert.empirical_risk + cert.complexity);
  EXPECT_TRUE(cert.holds);
}

TEST(BoundCertificate, ZeroGapAlwaysHolds) {
  for (auto mode : {LambdaMode::fixed_lambda, LambdaMode::optimized_lambda}) {
    EXPECT_TRUE(bound_certificate(0.4, 0.4, 3.0, example_params(), mode).holds);
  }
}

TEST(BoundCertificate, ConstructedViolation) {
  BoundParams bp = example_params();
  bp.num_clients = 1000;
  bp.samples_per_client = 1e6;
  bp.lambda = 1e4;
  const auto cert = bound_certificate(0.0, 1.0, 0.0, bp, LambdaMode::fixed_lambda);
  EXPECT_LT(cert.complexity, 0.01);
  EXPECT_FALSE(cert.holds);
}

TEST(BoundCertificate, RejectsRiskOutsideRange) {
  EXPECT_THROW(bound_certificate(1.5, 0.2, 0.0, example_params(), LambdaMode::fixed_lambda), std::invalid_argument);
  EXPECT_THROW(bound_certificate(0.2, -0.1, 0.0, example_params(), LambdaMode::optimized_lambda),
               std::invalid_argument);
}
