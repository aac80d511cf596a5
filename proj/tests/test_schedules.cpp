#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ldif/schedules.hpp"

namespace {

using namespace ldif;

double f_cos(double t, double T, double s) {
  const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
  return c * c;
}

TEST(CosineSchedule, MatchesClosedFormBeforeClipping) {
  const std::size_t T = 4000;
  const auto sched = cosine_schedule(T, 0.008);
  ASSERT_EQ(sched.T(), T);
  for (std::size_t t = 1; t <= T; ++t) {
    const double ab = f_cos(static_cast<double>(t), T, 0.008) / f_cos(0.0, T, 0.008);
    if (sched.beta(t) < 0.999) {
      EXPECT_NEAR(sched.alpha_bar(t), ab, 1e-12 * ab + 1e-300) << t;
    }
  }
}

TEST(CosineSchedule, BetasMonotoneAndInOpenUnitInterval) {
  const auto sched = cosine_schedule(4000, 0.008);
  double prev = 0.0;
  for (std::size_t t = 1; t <= sched.T(); ++t) {
    const double b = sched.beta(t);
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
    EXPECT_GE(b, prev) << t;
    prev = b;
  }
  EXPECT_LE(sched.beta(sched.T()), 0.999);
}

TEST(CosineSchedule, FirstBetaSmallAndFinalAlphaBarTiny) {
  const auto sched = cosine_schedule(4000, 0.008);
  EXPECT_GT(sched.beta(1), 0.0);
  EXPECT_LT(sched.beta(1), 1e-4);
  EXPECT_LT(sched.alpha_bar(4000), 0.01);
}

TEST(CosineSchedule, RejectsBadArguments) {
  EXPECT_THROW(cosine_schedule(0), ConfigError);
  EXPECT_THROW(cosine_schedule(10, 0.0), ConfigError);
  EXPECT_THROW(DiscreteSchedule({0.1, 1.0}), ConfigError);
  EXPECT_THROW(DiscreteSchedule({}), ConfigError);
}

TEST(DiscreteSchedule, TimestepRangeIsChecked) {
  const auto sched = cosine_schedule(10);
  EXPECT_THROW(sched.beta(0), Error);
  EXPECT_THROW(sched.alpha_bar(11), Error);
}

class ScheduleProperties : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ScheduleProperties, AlphaBarIsProductOfOneMinusBeta) {
  const auto sched = cosine_schedule(GetParam(), 0.008);
  double prod = 1.0;
  double prev = 1.0;
  for (std::size_t t = 1; t <= sched.T(); ++t) {
    prod *= 1.0 - sched.beta(t);
    EXPECT_NEAR(sched.alpha_bar(t), prod, 1e-12 * prod);
    EXPECT_LT(sched.alpha_bar(t), prev);
    prev = sched.alpha_bar(t);
  }
}

// Chaining q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t) from x_0 = 1
// gives mean sqrt(alpha_bar_t) and variance 1 - alpha_bar_t at every t.
TEST_P(ScheduleProperties, ChainedKernelsGiveClosedFormMarginal) {
  const auto sched = cosine_schedule(GetParam(), 0.008);
  double mean = 1.0, var = 0.0;
  for (std::size_t t = 1; t <= sched.T(); ++t) {
    const double b = sched.beta(t);
    mean *= std::sqrt(1.0 - b);
    var = (1.0 - b) * var + b;
    const double ab = sched.alpha_bar(t);
    EXPECT_NEAR(mean, std::sqrt(ab), 1e-12 * std::sqrt(ab) + 1e-300);
    EXPECT_NEAR(var, 1.0 - ab, 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(StepCounts, ScheduleProperties, ::testing::Values(1, 2, 32, 1000, 4000, 4001));

TEST(SigmaGrid, LinearCase) {
  const auto g = power_sigma_grid(3, 1.0, 3.0, 1.0);
  ASSERT_EQ(g.sigma.size(), 4u);
  EXPECT_DOUBLE_EQ(g.sigma[0], 3.0);
  EXPECT_DOUBLE_EQ(g.sigma[1], 2.0);
  EXPECT_DOUBLE_EQ(g.sigma[2], 1.0);
  EXPECT_EQ(g.sigma[3], 0.0);
}

TEST(SigmaGrid, DefaultGridMatchesFormulaAndDecreases) {
  const auto g = power_sigma_grid(18, 0.002, 80.0, 7.0);
  ASSERT_EQ(g.sigma.size(), 19u);
  EXPECT_EQ(g.sigma[0], 80.0);
  EXPECT_EQ(g.sigma[17], 0.002);
  EXPECT_EQ(g.sigma[18], 0.0);
  for (std::size_t i = 0; i < 18; ++i) {
    const double a = std::pow(80.0, 1.0 / 7.0), b = std::pow(0.002, 1.0 / 7.0);
    const double want = std::pow(a + (static_cast<double>(i) / 17.0) * (b - a), 7.0);
    EXPECT_NEAR(g.sigma[i], want, 1e-12 * want);
    EXPECT_GT(g.sigma[i], g.sigma[i + 1]);
  }
}

TEST(SigmaGrid, EndpointsExactForManyShapes) {
  for (std::size_t N : {2, 5, 18, 64, 257}) {
    for (double rho : {1.0, 3.0, 7.0}) {
      const auto g = power_sigma_grid(N, 0.01, 50.0, rho);
      EXPECT_EQ(g.sigma.front(), 50.0);
      EXPECT_EQ(g.sigma[N - 1], 0.01);
      EXPECT_EQ(g.sigma[N], 0.0);
      for (std::size_t i = 0; i < N; ++i) EXPECT_GT(g.sigma[i], g.sigma[i + 1]);
    }
  }
}

TEST(SigmaGrid, RejectsBadParameters) {
  EXPECT_THROW(power_sigma_grid(18, 1.0, 0.5, 7.0), ConfigError);
  EXPECT_THROW(power_sigma_grid(18, 0.0, 80.0, 7.0), ConfigError);
  EXPECT_THROW(power_sigma_grid(18, 0.002, 80.0, 0.5), ConfigError);
  EXPECT_THROW(power_sigma_grid(1, 0.002, 80.0, 7.0), ConfigError);
}

}  // namespace
