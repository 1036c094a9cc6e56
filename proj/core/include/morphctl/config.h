// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Every field has a flat JSON key; files and command-line
// overrides go through the same key table, and unknown keys are rejected.

#ifndef MORPHCTL_CONFIG_H_
#define MORPHCTL_CONFIG_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphctl/policy.h"
#include "morphctl/replay_balancer.h"
#include "morphctl/sim.h"

namespace morphctl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  // Run
  std::string task = "flat";
  std::string robots;      // corpus directory or manifest
  std::string output_dir = "runs/default";
  std::uint64_t seed = 1;
  int checkpoint_interval = 10;

  // PPO
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  int epochs = 8;
  int minibatch_size = 5120;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  bool reward_normalization = true;
  double reward_clip = 10.0;
  bool observation_normalization = true;
  double observation_clip = 10.0;
  int timesteps_per_rollout = 2560;
  int num_workers = 16;
  int num_envs = 32;
  double total_timesteps = 1e8;
  std::string optimizer = "adam";
  double learning_rate = 3e-4;
  std::string lr_schedule = "warmup_cosine";
  int lr_warmup_iterations = 5;
  double max_grad_norm = 0.5;
  bool clip_value = true;
  bool normalize_advantages = true;

  // Transformer
  int layers = 5;
  int heads = 1;
  int d_model = 128;
  int feedforward = 1024;
  std::string activation = "relu";
  double dropout = 0.1;
  int global_hidden = 64;
  int max_tokens = 12;
  double action_std = 0.9;

  // Balancer
  double balancer_alpha = 0.1;
  double balancer_beta = 1.0;
  int balancer_warmup = 100;

  // Environment and evaluation
  int episode_horizon = 1000;
  int eval_trials = 10;

  static TrainConfig Full();
  // Small model and budget sized for a single workstation.
  static TrainConfig Desk();

  int NumIterations() const;
  PolicyConfig Policy() const;
  BalancerConfig Balancer() const;
  TaskConfig Task() const;
  void Validate() const;
};

// Keys in declaration order.
const std::vector<std::string>& ConfigKeys();

nlohmann::ordered_json ToJson(const TrainConfig& c);
// Starts from `base` and applies every key in `j`. Unknown keys, wrong
// types and invalid values raise ConfigError.
TrainConfig FromJson(const nlohmann::json& j, const TrainConfig& base = TrainConfig::Full());
// Parses `value` according to the key's type ("true"/"false" for booleans).
void ApplyOverride(TrainConfig& c, const std::string& key, const std::string& value);

TrainConfig LoadConfigFile(const std::string& path, const TrainConfig& base = TrainConfig::Full());

// Linear warmup from 0, then cosine decay to 0 over the remaining iterations.
double LrAt(int iteration, const TrainConfig& c);

}  // namespace morphctl

#endif  // MORPHCTL_CONFIG_H_
