// SPDX-License-Identifier: Apache-2.0
//
// The joint training loop: collect episodes over the robot pool, normalize
// rewards, estimate advantages, run PPO epochs, then update observation
// statistics and robot sampling weights.

#ifndef MORPHCTL_TRAINER_H_
#define MORPHCTL_TRAINER_H_

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphctl/config.h"
#include "morphctl/policy.h"
#include "morphctl/ppo.h"
#include "morphctl/replay_balancer.h"

namespace morphctl {

// Everything needed to continue training bit-exactly.
struct TrainerState {
  TrainConfig config;
  ActorCritic net;
  AdamState adam;
  ObsNormalizers obs_norm;
  RunningNormalizer ret_norm;
  PerformanceTracker balancer;
  std::vector<std::string> robot_ids;
  int iteration = 0;  // completed iterations

  // Fresh state: parameters initialized from DeriveSeed(config.seed, init).
  static TrainerState Create(const TrainConfig& config, const std::vector<Robot>& robots);
};

class Trainer {
 public:
  Trainer(TrainerState state, std::vector<Robot> robots);

  // Runs one iteration and returns its metrics record.
  nlohmann::ordered_json Step();
  // Runs until config.NumIterations() (or `max_iterations` more when >= 0).
  // `on_iteration` is called after each iteration with the record.
  void Run(int max_iterations = -1,
           const std::function<void(const nlohmann::ordered_json&, const TrainerState&)>&
               on_iteration = nullptr);

  const TrainerState& state() const { return state_; }
  TrainerState& mutable_state() { return state_; }
  const std::vector<Robot>& robots() const { return robots_; }
  bool finished() const { return state_.iteration >= state_.config.NumIterations(); }

 private:
  TrainerState state_;
  std::vector<Robot> robots_;
};

// Validates that the checkpoint's robot list matches the pool (by id).
void CheckRobotsMatch(const TrainerState& state, const std::vector<Robot>& robots);

}  // namespace morphctl

#endif  // MORPHCTL_TRAINER_H_
