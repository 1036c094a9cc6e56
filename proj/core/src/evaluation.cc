// SPDX-License-Identifier: Apache-2.0

#include "morphctl/evaluation.h"

#include <algorithm>
#include <cmath>
#include <memory>

namespace morphctl {

std::vector<TrialResult> EvaluateRobot(const ActorCritic& net, const ObsNormalizers& norm,
                                       const MorphologyGraph& graph, const TaskConfig& task,
                                       int trials, std::uint64_t seed, ActionMode mode) {
  if (trials < 1) throw PpoError("trials must be >= 1");
  struct Trial {
    std::unique_ptr<Environment> env;
    std::unique_ptr<ObservationBuilder> builder;
    Rng rng;
    ObservationBundle obs;
  };
  std::vector<Trial> ts(trials);
  std::vector<TrialResult> results(trials);
  std::vector<int> active;
  for (int t = 0; t < trials; ++t) {
    ts[t].env = std::make_unique<Environment>(graph, task,
                                              DeriveSeed(seed, {static_cast<std::uint64_t>(t)}));
    ts[t].builder = std::make_unique<ObservationBuilder>(
        ts[t].env->model(), DfsTokenOrder(graph), net.config().max_tokens);
    ts[t].rng = Rng(DeriveSeed(seed, {static_cast<std::uint64_t>(t), 0x52414e44ULL}));
    active.push_back(t);
  }
  while (!active.empty()) {
    std::vector<std::vector<double>> actions(active.size());
    if (mode == ActionMode::kPolicyMean) {
      std::vector<const ObservationBundle*> obs;
      for (int t : active) {
        ts[t].obs = norm.Apply(ts[t].builder->Build(ts[t].env->state(), ts[t].env->terrain()));
        obs.push_back(&ts[t].obs);
      }
      const ActorCritic::Output out = net.Evaluate(TokenBatch::Build(obs, true));
      for (std::size_t i = 0; i < active.size(); ++i) actions[i] = out.dists[i].mean;
    } else {
      for (std::size_t i = 0; i < active.size(); ++i) {
        Trial& tr = ts[active[i]];
        actions[i].resize(tr.builder->live_joints().size());
        for (double& a : actions[i]) a = tr.rng.Uniform(-1.0, 1.0);
      }
    }
    std::vector<int> next;
    for (std::size_t i = 0; i < active.size(); ++i) {
      Trial& tr = ts[active[i]];
      std::vector<double> env_action(tr.env->num_joints(), 0.0);
      const auto& live = tr.builder->live_joints();
      for (std::size_t k = 0; k < live.size(); ++k) env_action[live[k]] = actions[i][k];
      const StepResult r = tr.env->Step(env_action);
      TrialResult& res = results[active[i]];
      res.reward += r.reward;
      ++res.length;
      if (r.done) {
        res.reason = r.reason;
      } else {
        next.push_back(active[i]);
      }
    }
    active = std::move(next);
  }
  return results;
}

double MeanOf(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double PopulationStd(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = MeanOf(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<RobotScore> EvaluatePool(const ActorCritic& net, const ObsNormalizers& norm,
                                     const std::vector<Robot>& robots, const TaskConfig& task,
                                     int trials, std::uint64_t seed, ActionMode mode) {
  std::vector<RobotScore> scores;
  for (const Robot& r : robots) {
    RobotScore s;
    s.id = r.id;
    for (const TrialResult& t : EvaluateRobot(net, norm, r.graph, task, trials, seed, mode)) {
      s.rewards.push_back(t.reward);
    }
    s.mean = MeanOf(s.rewards);
    s.std = PopulationStd(s.rewards);
    scores.push_back(std::move(s));
  }
  return scores;
}

ConfidenceInterval BootstrapMeanCi(std::span<const double> values, int resamples,
                                   std::uint64_t seed, double level) {
  if (values.empty()) throw PpoError("bootstrap needs at least one value");
  if (resamples < 1) throw PpoError("bootstrap needs at least one resample");
  ConfidenceInterval ci;
  ci.mean = MeanOf(values);
  Rng rng(seed);
  std::vector<double> means(resamples);
  const std::size_t n = values.size();
  for (int b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.UniformIndex(n)];
    means[b] = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * (resamples - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, means.size() - 1);
    return means[i] + (pos - i) * (means[j] - means[i]);
  };
  ci.lo = quantile(tail);
  ci.hi = quantile(1.0 - tail);
  return ci;
}

}  // namespace morphctl
