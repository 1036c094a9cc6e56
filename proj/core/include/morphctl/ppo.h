// SPDX-License-Identifier: Apache-2.0
//
// Experience collection, advantage estimation and the clipped PPO objective.

#ifndef MORPHCTL_PPO_H_
#define MORPHCTL_PPO_H_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphctl/config.h"
#include "morphctl/morphology.h"
#include "morphctl/observation.h"
#include "morphctl/policy.h"
#include "morphctl/sim.h"

namespace morphctl {

class PpoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Robot {
  std::string id;
  MorphologyGraph graph;
};

struct ObsNormalizers {
  RunningNormalizer local;
  RunningNormalizer global;
  bool enabled = true;

  ObsNormalizers() = default;
  ObsNormalizers(int local_width, int global_width, double clip, bool enabled);
  ObservationBundle Apply(const ObservationBundle& raw) const;
  void Update(std::span<const ObservationBundle> raw);
};

struct EpisodeRecord {
  int robot = 0;
  int slot = 0;
  int length = 0;
  double reward = 0.0;  // undiscounted raw return
  bool complete = false;  // false when cut by the rollout budget
  std::string reason;   // "fall", "horizon" or "budget"
  std::uint64_t terrain_seed = 0;
};

struct RolloutBuffer {
  std::vector<ObservationBundle> obs;  // raw, before normalization
  std::vector<std::vector<double>> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<char> dones;      // true terminal (fall)
  std::vector<char> truncated;  // horizon or budget cut: bootstrap below
  std::vector<double> bootstrap;
  std::vector<int> robot;
  std::vector<int> slot;
  std::vector<EpisodeRecord> episodes;

  std::size_t size() const { return rewards.size(); }
  void Append(RolloutBuffer&& other);
};

struct CollectSpec {
  int num_envs = 1;
  int steps_per_env = 1;
  int num_workers = 1;
  std::uint64_t seed = 0;
  int iteration = 0;
  bool deterministic = false;  // act with the mean
};

// Every env slot runs whole episodes on robots drawn from `probs` until it
// has produced steps_per_env transitions; a final partial episode is cut and
// bootstrapped. Slots are spread over worker threads; the merged buffer is
// ordered by slot so results do not depend on thread timing.
RolloutBuffer CollectRollouts(const ActorCritic& policy, const ObsNormalizers& norm,
                              const std::vector<Robot>& robots, const TaskConfig& task,
                              const std::vector<double>& probs, const CollectSpec& spec);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Backward recursion. At a terminal step the next value is 0; at a truncated
// step it is bootstrap[t] and the advantage chain restarts.
GaeResult ComputeGae(std::span<const double> rewards, std::span<const double> values,
                     std::span<const char> dones, std::span<const char> truncated,
                     std::span<const double> bootstrap, double gamma, double lambda);

// Scales rewards by the running std of per-slot discounted returns, then
// clips. Updates `ret_norm` first.
std::vector<double> NormalizeRewards(const RolloutBuffer& buf, RunningNormalizer& ret_norm,
                                     double gamma, double clip);

struct LossStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

// Minibatch inputs for the loss. `obs` are already normalized.
struct Minibatch {
  std::vector<const ObservationBundle*> obs;
  std::vector<const std::vector<double>*> actions;
  std::vector<double> old_log_probs;
  std::vector<double> old_values;
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Records policy and critic forward passes and the scalar PPO loss on `tape`.
// Returns the loss node.
Tape::Id PpoLoss(Tape& tape, const ActorCritic& net, const Minibatch& mb, const TrainConfig& c,
                 Rng* dropout_rng, LossStats* stats);

}  // namespace morphctl

#endif  // MORPHCTL_PPO_H_
