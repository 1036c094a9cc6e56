// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "morphctl/replay_balancer.h"

namespace morphctl {
namespace {

BalancerConfig NoWarmup(double alpha = 0.1, double beta = 1.0) {
  BalancerConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.warmup_iterations = 0;
  return c;
}

double Sum(const std::vector<double>& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

TEST(Tracker, IterationMeanAndEma) {
  PerformanceTracker t(2, NoWarmup());
  t.RecordEpisode(0, 400);
  t.RecordEpisode(0, 600);
  t.EndIteration();
  EXPECT_DOUBLE_EQ(t.ema()[0], 0.1 * 500 + 0.9 * 1000);
  EXPECT_DOUBLE_EQ(t.ema()[0], 950.0);
  EXPECT_EQ(t.ema()[1], 1000.0);  // no data: carried forward
  EXPECT_EQ(t.iteration(), 1);
  t.EndIteration();
  EXPECT_DOUBLE_EQ(t.ema()[0], 950.0);
}

TEST(Tracker, DegenerateAlphas) {
  PerformanceTracker one(1, NoWarmup(1.0));
  one.RecordEpisode(0, 321);
  one.EndIteration();
  EXPECT_EQ(one.ema()[0], 321.0);
  PerformanceTracker zero(1, NoWarmup(0.0));
  zero.RecordEpisode(0, 321);
  zero.EndIteration();
  EXPECT_EQ(zero.ema()[0], 1000.0);
}

TEST(Tracker, LengthBounds) {
  PerformanceTracker t(2, NoWarmup());
  EXPECT_THROW(t.RecordEpisode(0, 1200), BalancerError);
  EXPECT_THROW(t.RecordEpisode(0, 0), BalancerError);
  EXPECT_THROW(t.RecordEpisode(2, 10), BalancerError);
  EXPECT_NO_THROW(t.RecordEpisode(1, 1000));
}

TEST(Probs, Examples) {
  PerformanceTracker t(2, NoWarmup());
  EXPECT_EQ(t.SamplingProbs(), (std::vector<double>{0.5, 0.5}));
  t.Restore({500.0, 1000.0}, 5);
  const auto p = t.SamplingProbs();
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);

  PerformanceTracker flat(3, NoWarmup(0.1, 0.0));
  flat.Restore({10.0, 500.0, 1000.0}, 5);
  for (double x : flat.SamplingProbs()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Probs, WarmupIsUniformRegardlessOfData) {
  BalancerConfig c = NoWarmup();
  c.warmup_iterations = 3;
  PerformanceTracker t(4, c);
  for (int it = 0; it < 3; ++it) {
    for (double x : t.SamplingProbs()) EXPECT_EQ(x, 0.25);
    t.RecordEpisode(0, 5);
    t.RecordEpisode(2, 900);
    t.EndIteration();
  }
  EXPECT_GT(t.SamplingProbs()[0], 0.25);
  t.ResetToWarmup();
  for (double x : t.SamplingProbs()) EXPECT_EQ(x, 0.25);
}

// Random E vectors: normalization, positivity and strict monotonicity.
TEST(Probs, PropertyOverRandomEmas) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformIndex(20));
    std::vector<double> e(n);
    for (double& x : e) x = rng.Uniform(1.0, 1000.0);
    const double beta = trial % 2 ? 1.0 : rng.Uniform(0.1, 3.0);
    PerformanceTracker t(n, NoWarmup(0.1, beta));
    t.Restore(e, 1);
    const auto p = t.SamplingProbs();
    ASSERT_NEAR(Sum(p), 1.0, 1e-12);
    for (int j = 0; j < n; ++j) {
      ASSERT_GT(p[j], 0.0);
      for (int k = 0; k < n; ++k) {
        if (e[j] < e[k]) ASSERT_GT(p[j], p[k]);
      }
    }
  }
}

TEST(Probs, EmaStaysInRange) {
  PerformanceTracker t(3, NoWarmup(0.3));
  Rng rng(6);
  for (int it = 0; it < 200; ++it) {
    for (int k = 0; k < 3; ++k) {
      if (rng.Uniform() < 0.7) t.RecordEpisode(k, 1 + static_cast<int>(rng.UniformIndex(1000)));
    }
    t.EndIteration();
    for (double e : t.ema()) {
      ASSERT_GT(e, 0.0);
      ASSERT_LE(e, 1000.0);
    }
  }
}

TEST(Sample, SingleRobotAlwaysZero) {
  PerformanceTracker t(1, NoWarmup());
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(t.Sample(rng), 0);
}

TEST(Sample, MonteCarloFrequency) {
  // 4 sigma of a Binomial(1e5, 2/3) proportion is about 0.006.
  Rng rng(2024);
  const std::vector<double> p = {2.0 / 3.0, 1.0 / 3.0};
  int zeros = 0;
  for (int i = 0; i < 100000; ++i) zeros += PerformanceTracker::SampleFrom(p, rng) == 0;
  const double f = zeros / 1e5;
  EXPECT_GE(f, 0.66);
  EXPECT_LE(f, 0.674);
}

TEST(Sample, Reproducible) {
  PerformanceTracker t(5, NoWarmup());
  t.Restore({100, 200, 300, 400, 1000}, 2);
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(t.Sample(a), t.Sample(b));
}

}  // namespace
}  // namespace morphctl
