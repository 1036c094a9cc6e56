// SPDX-License-Identifier: Apache-2.0
//
// Per-robot sampling weights for experience collection. Robots whose
// smoothed episode length is short (they fall early) are sampled more often:
// P_k proportional to (max_len / E_k)^beta, uniform during warmup.

#ifndef MORPHCTL_REPLAY_BALANCER_H_
#define MORPHCTL_REPLAY_BALANCER_H_

#include <stdexcept>
#include <vector>

#include "morphctl/rng.h"

namespace morphctl {

class BalancerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BalancerConfig {
  double alpha = 0.1;
  double beta = 1.0;
  int max_episode_len = 1000;
  int warmup_iterations = 100;
};

class PerformanceTracker {
 public:
  PerformanceTracker() = default;
  PerformanceTracker(int num_robots, const BalancerConfig& config);

  void RecordEpisode(int robot, int length);
  // Folds this iteration's mean lengths into E and advances the iteration.
  void EndIteration();
  std::vector<double> SamplingProbs() const;
  int Sample(Rng& rng) const;
  static int SampleFrom(const std::vector<double>& probs, Rng& rng);

  int num_robots() const { return static_cast<int>(ema_.size()); }
  const std::vector<double>& ema() const { return ema_; }
  int iteration() const { return iteration_; }
  const BalancerConfig& config() const { return config_; }

  // Checkpoint support. Pending (un-ended) iteration data is not saved.
  void Restore(std::vector<double> ema, int iteration);
  void ResetToWarmup();

 private:
  BalancerConfig config_;
  std::vector<double> ema_;
  std::vector<double> sum_;
  std::vector<int> count_;
  int iteration_ = 0;
};

}  // namespace morphctl

#endif  // MORPHCTL_REPLAY_BALANCER_H_
