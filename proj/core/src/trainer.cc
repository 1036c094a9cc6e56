// SPDX-License-Identifier: Apache-2.0

#include "morphctl/trainer.h"

#include <algorithm>
#include <numeric>

namespace morphctl {
namespace {

constexpr std::uint64_t kInitStream = 0x494e4954ULL;
constexpr std::uint64_t kShuffleStream = 0x5348554655ULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL;

nlohmann::ordered_json Mean(double sum, int n) {
  if (n == 0) return nullptr;
  return sum / n;
}

}  // namespace

TrainerState TrainerState::Create(const TrainConfig& config, const std::vector<Robot>& robots) {
  config.Validate();
  if (robots.empty()) throw PpoError("robot pool is empty");
  TrainerState s;
  s.config = config;
  s.net = ActorCritic(config.Policy(), DeriveSeed(config.seed, {kInitStream}));
  s.obs_norm = ObsNormalizers(kLocalWidth, config.Policy().global_width, config.observation_clip,
                              config.observation_normalization);
  s.ret_norm = RunningNormalizer(1, 1e300);
  s.balancer = PerformanceTracker(static_cast<int>(robots.size()), config.Balancer());
  for (const Robot& r : robots) s.robot_ids.push_back(r.id);
  return s;
}

void CheckRobotsMatch(const TrainerState& state, const std::vector<Robot>& robots) {
  if (state.robot_ids.size() != robots.size()) {
    throw PpoError("checkpoint was trained on " + std::to_string(state.robot_ids.size()) +
                   " robots, pool has " + std::to_string(robots.size()));
  }
  for (std::size_t i = 0; i < robots.size(); ++i) {
    if (state.robot_ids[i] != robots[i].id) {
      throw PpoError("robot " + std::to_string(i) + " is '" + robots[i].id +
                     "' but the checkpoint expects '" + state.robot_ids[i] + "'");
    }
  }
}

Trainer::Trainer(TrainerState state, std::vector<Robot> robots)
    : state_(std::move(state)), robots_(std::move(robots)) {
  CheckRobotsMatch(state_, robots_);
  for (const Robot& r : robots_) {
    if (static_cast<int>(r.graph.nodes.size()) > state_.config.max_tokens) {
      throw PpoError("robot '" + r.id + "' has " + std::to_string(r.graph.nodes.size()) +
                     " modules, more than max_tokens " + std::to_string(state_.config.max_tokens));
    }
  }
}

nlohmann::ordered_json Trainer::Step() {
  TrainerState& st = state_;
  const TrainConfig& c = st.config;
  const int it = st.iteration;
  const std::vector<double> probs = st.balancer.SamplingProbs();

  CollectSpec spec;
  spec.num_envs = c.num_envs;
  spec.steps_per_env = c.timesteps_per_rollout;
  spec.num_workers = c.num_workers;
  spec.seed = c.seed;
  spec.iteration = it;
  RolloutBuffer buf = CollectRollouts(st.net, st.obs_norm, robots_, c.Task(), probs, spec);

  std::vector<double> rewards = c.reward_normalization
                                    ? NormalizeRewards(buf, st.ret_norm, c.gamma, c.reward_clip)
                                    : buf.rewards;
  if (!c.reward_normalization) {
    for (double& r : rewards) r = std::clamp(r, -c.reward_clip, c.reward_clip);
  }
  const GaeResult gae =
      ComputeGae(rewards, buf.values, buf.dones, buf.truncated, buf.bootstrap, c.gamma, c.gae_lambda);

  std::vector<ObservationBundle> normed;
  normed.reserve(buf.size());
  for (const ObservationBundle& o : buf.obs) normed.push_back(st.obs_norm.Apply(o));

  const double lr = LrAt(it, c);
  AdamConfig adam;
  adam.max_grad_norm = c.max_grad_norm;
  Rng shuffle(DeriveSeed(c.seed, {static_cast<std::uint64_t>(it), kShuffleStream}));
  Rng dropout(DeriveSeed(c.seed, {static_cast<std::uint64_t>(it), kDropoutStream}));
  std::vector<int> order(buf.size());
  LossStats sum;
  int updates = 0;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.UniformIndex(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += c.minibatch_size) {
      const std::size_t end = std::min(order.size(), start + c.minibatch_size);
      Minibatch mb;
      for (std::size_t k = start; k < end; ++k) {
        const int i = order[k];
        mb.obs.push_back(&normed[i]);
        mb.actions.push_back(&buf.actions[i]);
        mb.old_log_probs.push_back(buf.log_probs[i]);
        mb.old_values.push_back(buf.values[i]);
        mb.advantages.push_back(gae.advantages[i]);
        mb.returns.push_back(gae.returns[i]);
      }
      st.net.params().ZeroGrad();
      Tape tape;
      LossStats stats;
      const Tape::Id loss = PpoLoss(tape, st.net, mb, c, &dropout, &stats);
      tape.Backward(loss);
      stats.grad_norm = AdamStep(st.net.params(), st.adam, lr, adam);
      sum.loss += stats.loss;
      sum.policy_loss += stats.policy_loss;
      sum.value_loss += stats.value_loss;
      sum.entropy += stats.entropy;
      sum.approx_kl += stats.approx_kl;
      sum.clip_fraction += stats.clip_fraction;
      sum.grad_norm += stats.grad_norm;
      ++updates;
    }
  }

  st.obs_norm.Update(buf.obs);
  const int n = static_cast<int>(robots_.size());
  std::vector<double> robot_sum(n, 0.0);
  std::vector<int> robot_count(n, 0);
  double ep_sum = 0.0, len_sum = 0.0;
  int complete = 0;
  for (const EpisodeRecord& e : buf.episodes) {
    if (!e.complete) continue;
    st.balancer.RecordEpisode(e.robot, e.length);
    robot_sum[e.robot] += e.reward;
    ++robot_count[e.robot];
    ep_sum += e.reward;
    len_sum += e.length;
    ++complete;
  }
  st.balancer.EndIteration();
  ++st.iteration;

  nlohmann::ordered_json rec;
  rec["iteration"] = st.iteration;
  rec["timesteps"] = static_cast<long long>(st.iteration) * c.num_envs * c.timesteps_per_rollout;
  rec["lr"] = lr;
  rec["episodes"] = complete;
  rec["mean_reward"] = Mean(ep_sum, complete);
  rec["mean_episode_length"] = Mean(len_sum, complete);
  nlohmann::ordered_json per_robot = nlohmann::ordered_json::array();
  for (int k = 0; k < n; ++k) per_robot.push_back(Mean(robot_sum[k], robot_count[k]));
  rec["robot_reward"] = per_robot;
  rec["robot_episodes"] = robot_count;
  rec["balancer_ema"] = st.balancer.ema();
  rec["sampling_probs"] = probs;
  const double u = std::max(updates, 1);
  rec["loss"] = sum.loss / u;
  rec["policy_loss"] = sum.policy_loss / u;
  rec["value_loss"] = sum.value_loss / u;
  rec["entropy"] = sum.entropy / u;
  rec["approx_kl"] = sum.approx_kl / u;
  rec["clip_fraction"] = sum.clip_fraction / u;
  rec["grad_norm"] = sum.grad_norm / u;
  return rec;
}

void Trainer::Run(int max_iterations,
                  const std::function<void(const nlohmann::ordered_json&, const TrainerState&)>&
                      on_iteration) {
  const int total = state_.config.NumIterations();
  const int stop = max_iterations >= 0 ? std::min(total, state_.iteration + max_iterations) : total;
  while (state_.iteration < stop) {
    const nlohmann::ordered_json rec = Step();
    if (on_iteration) on_iteration(rec, state_);
  }
}

}  // namespace morphctl
