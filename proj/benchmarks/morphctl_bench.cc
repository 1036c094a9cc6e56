// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include <benchmark/benchmark.h>

#include "morphctl/analysis.h"
#include "morphctl/config.h"
#include "morphctl/observation.h"
#include "morphctl/policy.h"
#include "morphctl/ppo.h"
#include "morphctl/sim.h"

namespace morphctl {
namespace {

MorphologyGraph Robot(std::uint64_t seed) {
  SpaceConfig space;
  space.min_nodes = space.max_nodes = 8;
  Rng rng(seed);
  return SampleMorphology(space, rng);
}

std::vector<ObservationBundle> Observations(int count, int max_tokens) {
  std::vector<ObservationBundle> out;
  for (int i = 0; i < count; ++i) {
    const MorphologyGraph g = Robot(i);
    Environment env(g, TaskConfig::ForTask(Task::kVariable), i);
    ObservationBuilder b(env.model(), DfsTokenOrder(g), max_tokens);
    out.push_back(b.Build(env.state(), env.terrain()));
  }
  return out;
}

void BM_SimStep(benchmark::State& state) {
  const MorphologyGraph g = Robot(1);
  Environment env(g, TaskConfig::ForTask(Task::kVariable), 1);
  Rng rng(2);
  std::vector<double> a(env.num_joints());
  std::uint64_t episode = 0;
  for (auto _ : state) {
    for (double& x : a) x = rng.Uniform(-1.0, 1.0);
    if (env.Step(a).done) env.Reset(++episode);
  }
}
BENCHMARK(BM_SimStep);

void BM_ObservationBuild(benchmark::State& state) {
  const MorphologyGraph g = Robot(1);
  Environment env(g, TaskConfig::ForTask(Task::kVariable), 1);
  ObservationBuilder b(env.model(), DfsTokenOrder(g), 12);
  for (auto _ : state) benchmark::DoNotOptimize(b.Build(env.state(), env.terrain()));
}
BENCHMARK(BM_ObservationBuild);

// Batched actor and critic forward; arg 0 is the batch size, arg 1 selects
// packed (1) or padded (0) token rows.
void BM_PolicyForward(benchmark::State& state, const TrainConfig& c) {
  PolicyConfig p = c.Policy();
  p.dropout = 0.0;
  const ActorCritic net(p, 1);
  const auto obs = Observations(static_cast<int>(state.range(0)), p.max_tokens);
  std::vector<const ObservationBundle*> ptrs;
  for (const auto& o : obs) ptrs.push_back(&o);
  const TokenBatch tb = TokenBatch::Build(ptrs, state.range(1) != 0);
  for (auto _ : state) benchmark::DoNotOptimize(net.Evaluate(tb));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_CAPTURE(BM_PolicyForward, desk, TrainConfig::Desk())
    ->Args({1, 1})
    ->Args({64, 0})
    ->Args({64, 1});
BENCHMARK_CAPTURE(BM_PolicyForward, full, TrainConfig::Full())->Args({1, 1})->Args({64, 1});

void BM_PpoLossBackward(benchmark::State& state) {
  TrainConfig c = TrainConfig::Desk();
  const ActorCritic net(c.Policy(), 1);
  const int n = static_cast<int>(state.range(0));
  const auto obs = Observations(n, c.max_tokens);
  Minibatch mb;
  std::vector<std::vector<double>> actions;
  for (const auto& o : obs) mb.obs.push_back(&o);
  const auto out = net.Evaluate(TokenBatch::Build(mb.obs, true));
  Rng rng(3);
  for (int s = 0; s < n; ++s) {
    actions.push_back(SampleAction(out.dists[s], rng));
    mb.old_log_probs.push_back(LogProb(out.dists[s], actions.back()));
    mb.old_values.push_back(out.values(s));
    mb.advantages.push_back(rng.Normal());
    mb.returns.push_back(rng.Normal());
  }
  for (const auto& a : actions) mb.actions.push_back(&a);
  ActorCritic train = net;
  Rng dropout(4);
  for (auto _ : state) {
    Tape t(true);
    const Tape::Id loss = PpoLoss(t, train, mb, c, &dropout, nullptr);
    train.params().ZeroGrad();
    t.Backward(loss);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_PpoLossBackward)->Arg(64)->Arg(256);

// One attention op over `segments` samples of 12 tokens, D = 128.
void BM_Attention(benchmark::State& state) {
  const int segments = static_cast<int>(state.range(0));
  const int rows = segments * 12;
  Rng rng(5);
  Matrix q(rows, 128), k(rows, 128), v(rows, 128);
  for (Matrix* m : {&q, &k, &v})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.Normal();
  std::vector<Segment> seg;
  for (int s = 0; s < segments; ++s) seg.push_back({s * 12, 12});
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(t.Attention(t.Input(q), t.Input(k), t.Input(v), seg, {}, 1));
  }
}
BENCHMARK(BM_Attention)->Arg(1)->Arg(64);

void BM_StableRank(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(6);
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.Uniform();
  for (auto _ : state) benchmark::DoNotOptimize(StableRank(a));
}
BENCHMARK(BM_StableRank)->Arg(4)->Arg(12);

}  // namespace
}  // namespace morphctl

BENCHMARK_MAIN();
