// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "morphctl/policy.h"
#include "test_util.h"

namespace morphctl {
namespace {

using testing::SampledRobots;
using testing::Spider;

PolicyConfig Tiny(int max_tokens = 12) {
  PolicyConfig c;
  c.max_tokens = max_tokens;
  c.d_model = 16;
  c.layers = 2;
  c.feedforward = 32;
  c.global_hidden = 8;
  c.dropout = 0.0;
  return c;
}

ObservationBundle MakeBundle(const MorphologyGraph& g, int max_tokens, std::uint64_t seed = 0,
                             int steps = 5) {
  Environment env(g, TaskConfig::ForTask(Task::kVariable), seed);
  Rng rng(seed);
  for (int t = 0; t < steps && !env.done(); ++t) {
    std::vector<double> a(env.num_joints());
    for (double& x : a) x = rng.Uniform(-1.0, 1.0);
    env.Step(a);
  }
  ObservationBuilder builder(env.model(), DfsTokenOrder(g), max_tokens);
  return builder.Build(env.state(), env.terrain());
}

TokenBatch One(const ObservationBundle& b, bool packed = false) {
  const ObservationBundle* p = &b;
  return TokenBatch::Build(std::span<const ObservationBundle* const>(&p, 1), packed);
}

Matrix RunNet(const TransformerNet& net, const ParameterSet& ps, const TokenBatch& batch) {
  Tape t(false);
  return t.value(net.Forward(t, ps, batch, false, nullptr));
}

// Network whose decoder reads out the first D columns of the token state.
struct Probe {
  ParameterSet ps;
  TransformerNet net;
  explicit Probe(PolicyConfig c) {
    net = TransformerNet(ps, c, "probe", c.d_model);
    Rng rng(3);
    net.Initialize(ps, rng);
    Matrix& wd = ps[ps.Find("probe.Wd")].value;
    wd.setZero();
    wd.topRows(c.d_model) = Matrix::Identity(c.d_model, c.d_model);
  }
};

TEST(Embedding, ZeroWeGivesPositionEmbedding) {
  PolicyConfig c = Tiny();
  c.layers = 0;  // the stack is then the identity
  Probe p(c);
  p.ps[p.ps.Find("probe.We")].value.setZero();
  const ObservationBundle b = MakeBundle(Spider(3), 12);
  const Matrix out = RunNet(p.net, p.ps, One(b));
  EXPECT_TRUE(out.isApprox(p.ps[p.ps.Find("probe.Wpos")].value, 1e-15));
}

TEST(Embedding, PerTokenIndependence) {
  PolicyConfig c = Tiny();
  c.layers = 0;
  Probe p(c);
  const ObservationBundle a = MakeBundle(Spider(2), 12);
  ObservationBundle b = MakeBundle(Spider(4, 2), 12);
  b.local.row(0) = a.local.row(0);
  EXPECT_EQ(RunNet(p.net, p.ps, One(a)).row(0), RunNet(p.net, p.ps, One(b)).row(0));
}

ObservationBundle PermuteTokens(const ObservationBundle& b, const std::vector<int>& perm) {
  ObservationBundle out = b;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.local.row(static_cast<Eigen::Index>(i)) = b.local.row(perm[i]);
    out.joint_mask[i] = b.joint_mask[perm[i]];
  }
  return out;
}

TEST(Equivariance, PermutationWithAndWithoutPositionEmbedding) {
  const PolicyConfig c = Tiny();
  ActorCritic ac(c, 5);
  const ObservationBundle b = MakeBundle(SampledRobots(1, 12)[0], 12, 1);
  const int n = b.num_tokens();
  ASSERT_GE(n, 3);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = (i + 1) % n;
  const ObservationBundle pb = PermuteTokens(b, perm);

  auto means = [&](const ObservationBundle& x) {
    Tape t(false);
    return Matrix(t.value(ac.ActorMeans(t, One(x), false, nullptr)));
  };
  // Learned positions break equivariance.
  {
    const Matrix m = means(b), pm = means(pb);
    double diff = 0.0;
    for (int i = 0; i < n; ++i) diff = std::max(diff, (pm.row(i) - m.row(perm[i])).cwiseAbs().maxCoeff());
    EXPECT_GT(diff, 1e-6);
  }
  ac.params()[ac.params().Find("policy.Wpos")].value.setZero();
  {
    const Matrix m = means(b), pm = means(pb);
    for (int i = 0; i < n; ++i) {
      EXPECT_LT((pm.row(i) - m.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12) << "token " << i;
    }
  }
}

TEST(Stack, PaddedRowsDoNotLeak) {
  const PolicyConfig c = Tiny(16);
  ActorCritic ac(c, 6);
  const MorphologyGraph g = Spider(3, 2);
  const ObservationBundle small = MakeBundle(g, 12);
  const ObservationBundle big = MakeBundle(g, 16);
  ObservationBundle noisy = big;
  Rng rng(1);
  for (int t = noisy.num_tokens(); t < 16; ++t) {
    for (int k = 0; k < kLocalWidth; ++k) noisy.local(t, k) = rng.Normal(0.0, 5.0);
  }
  const auto a = ac.Evaluate(One(small));
  const auto b = ac.Evaluate(One(big));
  const auto p = ac.Evaluate(One(big, true));
  const auto z = ac.Evaluate(One(noisy));
  ASSERT_EQ(a.dists[0].mean.size(), 6u);
  for (const auto* o : {&b, &p, &z}) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(o->dists[0].mean[j], a.dists[0].mean[j], 1e-9);
    EXPECT_NEAR(o->values(0), a.values(0), 1e-9);
  }
  const std::vector<double> act(6, 0.2);
  EXPECT_NEAR(LogProb(z.dists[0], act), LogProb(a.dists[0], act), 1e-9);
}

TEST(Stack, SingleRealTokenIgnoresPadding) {
  Probe p(Tiny());
  ObservationBundle b = MakeBundle(testing::SphereOnly(), 12);
  const Matrix before = RunNet(p.net, p.ps, One(b));
  b.local.bottomRows(11).setConstant(3.0);
  const Matrix after = RunNet(p.net, p.ps, One(b));
  EXPECT_TRUE(before.row(0).isApprox(after.row(0), 1e-12));
}

TEST(Decoder, ZeroWeightsGiveZeroMeans) {
  ActorCritic ac(Tiny(), 7);
  ac.params()[ac.params().Find("policy.Wd")].value.setZero();
  const auto out = ac.Evaluate(One(MakeBundle(Spider(4), 12)));
  for (double m : out.dists[0].mean) EXPECT_EQ(m, 0.0);
}

TEST(Decoder, LiveCountMatchesJoints) {
  ActorCritic ac(Tiny(), 8);
  const auto out = ac.Evaluate(One(MakeBundle(Spider(5), 12)));
  EXPECT_EQ(out.dists[0].mean.size(), 5u);
  for (const MorphologyGraph& g : SampledRobots(10, 2)) {
    int joints = 0;
    for (const Edge& e : g.edges) joints += static_cast<int>(e.joints.size());
    const TokenBatch tb = One(MakeBundle(g, 12));
    EXPECT_EQ(tb.num_live_joints(0), joints);
    EXPECT_EQ(static_cast<int>(ac.Evaluate(tb).dists[0].mean.size()), joints);
  }
}

TEST(Decoder, TerrainChangesEveryLiveMean) {
  ActorCritic ac(Tiny(), 9);
  Matrix& wd = ac.params()[ac.params().Find("policy.Wd")].value;
  Rng rng(4);
  for (Eigen::Index i = 0; i < wd.size(); ++i) wd.data()[i] = rng.Normal();
  ObservationBundle b = MakeBundle(Spider(4, 2), 12);
  const auto before = ac.Evaluate(One(b));
  for (Eigen::Index i = 0; i < b.global.size(); ++i) b.global(i) += rng.Normal();
  const auto after = ac.Evaluate(One(b));
  for (std::size_t j = 0; j < before.dists[0].mean.size(); ++j) {
    EXPECT_GT(std::abs(after.dists[0].mean[j] - before.dists[0].mean[j]), 1e-9);
  }
}

TEST(Distribution, ClosedForms) {
  ActionDistribution d;
  d.mean = {0.1, -0.4, 2.0};
  d.std = 1.0;
  EXPECT_NEAR(LogProb(d, d.mean), -1.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  d.mean.push_back(0.0);
  d.std = 0.9;
  EXPECT_NEAR(Entropy(d), 4.0 * (0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) + std::log(0.9)),
              1e-14);
  Rng a(3), b(3);
  EXPECT_EQ(SampleAction(d, a), SampleAction(d, b));
  EXPECT_THROW(LogProb(d, std::vector<double>{0.0}), PolicyError);
  // Monte Carlo: sample moments around the mean.
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = SampleAction(d, rng)[1] - d.mean[1];
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / 20000, 0.0, 0.03);
  EXPECT_NEAR(std::sqrt(sq / 20000), 0.9, 0.02);
}

TEST(Critic, MeanOverRealTokens) {
  const ObservationBundle b = MakeBundle(Spider(2), 6);
  const TokenBatch tb = One(b);
  Matrix per(6, 1);
  per << 1.0, 2.0, 3.0, 100.0, -50.0, 7.0;
  EXPECT_DOUBLE_EQ(SegmentMeanOverReal(per, tb)(0), 2.0);

  ActorCritic ac(Tiny(6), 10);
  ac.params()[ac.params().Find("critic.Wd")].value.setZero();
  ac.params()[ac.params().Find("critic.Wd.b")].value.setConstant(0.37);
  EXPECT_NEAR(ac.Evaluate(tb).values(0), 0.37, 1e-15);
}

TEST(Critic, SeparateTrunks) {
  ActorCritic ac(Tiny(), 1);
  const ParameterSet& ps = ac.params();
  EXPECT_GE(ps.Find("policy.We"), 0);
  EXPECT_GE(ps.Find("critic.We"), 0);
  EXPECT_GE(ps.Find("policy.block1.msa.Wq"), 0);
  EXPECT_GE(ps.Find("critic.Wg.W2"), 0);
  EXPECT_NE(ps[ps.Find("policy.We")].value, ps[ps.Find("critic.We")].value);
}

TEST(Batch, MultiSampleMatchesSingle) {
  ActorCritic ac(Tiny(), 12);
  std::vector<ObservationBundle> bundles;
  for (const MorphologyGraph& g : SampledRobots(4, 9)) bundles.push_back(MakeBundle(g, 12, 2));
  std::vector<const ObservationBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);
  for (bool packed : {false, true}) {
    const auto all = ac.Evaluate(TokenBatch::Build(ptrs, packed));
    for (std::size_t s = 0; s < bundles.size(); ++s) {
      const auto one = ac.Evaluate(One(bundles[s]));
      EXPECT_NEAR(all.values(static_cast<Eigen::Index>(s)), one.values(0), 1e-12);
      for (std::size_t j = 0; j < one.dists[0].mean.size(); ++j) {
        EXPECT_NEAR(all.dists[s].mean[j], one.dists[0].mean[j], 1e-12);
      }
    }
  }
}

TEST(Parameters, FullSizeAboutThreePointThreeMillion) {
  const ActorCritic ac(PolicyConfig{}, 0);
  const long n = ac.params().NumScalars();
  EXPECT_GT(n, 3'200'000);
  EXPECT_LT(n, 3'400'000);
}

// Full log-likelihood and value objective of a tiny net against central
// differences. Dropout off keeps the objective deterministic.
TEST(Gradients, PolicyAndValueMatchFiniteDifferences) {
  ActorCritic ac(Tiny(), 13);
  std::vector<ObservationBundle> bundles;
  for (const MorphologyGraph& g : SampledRobots(3, 14)) bundles.push_back(MakeBundle(g, 12, 3));
  std::vector<const ObservationBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);
  const TokenBatch tb = TokenBatch::Build(ptrs, true);
  Rng rng(2);
  std::vector<std::vector<double>> actions;
  for (int s = 0; s < tb.num_samples(); ++s) {
    std::vector<double> a(tb.num_live_joints(s));
    for (double& x : a) x = rng.Normal();
    actions.push_back(a);
  }
  auto objective = [&](bool backward) {
    Tape t(backward);
    const auto mu = ac.ActorMeans(t, tb, false, nullptr);
    const auto v = ac.CriticValue(t, tb, false, nullptr);
    const Matrix& M = t.value(mu);
    Matrix val(1, 1);
    val(0, 0) = t.value(v).squaredNorm();
    Matrix dmu = Matrix::Zero(M.rows(), M.cols());
    const double s2 = 0.9 * 0.9;
    for (int s = 0; s < tb.num_samples(); ++s) {
      int k = 0;
      const Segment seg = tb.segments[s];
      for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
        for (int j = 0; j < kJointSlots; ++j) {
          if (!tb.key_mask[r] || !tb.joint_mask[r][j]) continue;
          const double z = actions[s][k++] - M(r, j);
          val(0, 0) += -0.5 * z * z / s2;
          dmu(r, j) = z / s2;
        }
      }
    }
    const Matrix vv = t.value(v);
    const auto loss = t.Custom({mu, v}, val, [dmu, vv](const Matrix& g, std::vector<Matrix*>& in) {
      *in[0] += g(0, 0) * dmu;
      *in[1] += 2.0 * g(0, 0) * vv;
    });
    if (backward) t.Backward(loss);
    return t.value(loss)(0, 0);
  };
  ac.params().ZeroGrad();
  objective(true);
  // Central differences on a loss of size ~30 at h = 1e-5 carry ~1e-9 of
  // roundoff, so gradients under 1e-5 are judged against that floor.
  const GradCheckResult r =
      FiniteDifferenceCheck([&] { return objective(false); }, ac.params(), 1e-5, 6, 1, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] "
                                   << r.analytic << " vs " << r.numeric;
  EXPECT_GT(r.checked, 200);
}

}  // namespace
}  // namespace morphctl
