// SPDX-License-Identifier: Apache-2.0

#include "morphctl/replay_balancer.h"

#include <cmath>
#include <string>

namespace morphctl {

PerformanceTracker::PerformanceTracker(int num_robots, const BalancerConfig& config)
    : config_(config),
      ema_(num_robots, static_cast<double>(config.max_episode_len)),
      sum_(num_robots, 0.0),
      count_(num_robots, 0) {
  if (num_robots <= 0) throw BalancerError("balancer needs at least one robot");
  if (config.alpha < 0.0 || config.alpha > 1.0) throw BalancerError("alpha must be in [0, 1]");
  if (config.max_episode_len <= 0) throw BalancerError("max episode length must be positive");
}

void PerformanceTracker::RecordEpisode(int robot, int length) {
  if (robot < 0 || robot >= num_robots()) {
    throw BalancerError("robot index " + std::to_string(robot) + " out of range");
  }
  if (length < 1 || length > config_.max_episode_len) {
    throw BalancerError("episode length " + std::to_string(length) + " outside [1, " +
                        std::to_string(config_.max_episode_len) + "]");
  }
  sum_[robot] += length;
  ++count_[robot];
}

void PerformanceTracker::EndIteration() {
  for (int k = 0; k < num_robots(); ++k) {
    if (count_[k] > 0) {
      const double mean = sum_[k] / count_[k];
      ema_[k] = config_.alpha * mean + (1.0 - config_.alpha) * ema_[k];
    }
    sum_[k] = 0.0;
    count_[k] = 0;
  }
  ++iteration_;
}

std::vector<double> PerformanceTracker::SamplingProbs() const {
  const int n = num_robots();
  std::vector<double> p(n, 1.0 / n);
  if (iteration_ < config_.warmup_iterations || config_.beta == 0.0) return p;
  double z = 0.0;
  for (int k = 0; k < n; ++k) {
    p[k] = std::pow(config_.max_episode_len / ema_[k], config_.beta);
    z += p[k];
  }
  for (double& x : p) x /= z;
  return p;
}

int PerformanceTracker::SampleFrom(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.Uniform();
  double c = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    c += probs[k];
    if (u < c) return static_cast<int>(k);
  }
  // Rounding left u above the last cumulative sum.
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

int PerformanceTracker::Sample(Rng& rng) const { return SampleFrom(SamplingProbs(), rng); }

void PerformanceTracker::Restore(std::vector<double> ema, int iteration) {
  if (static_cast<int>(ema.size()) != num_robots()) {
    throw BalancerError("restored balancer has " + std::to_string(ema.size()) + " robots, expected " +
                        std::to_string(num_robots()));
  }
  ema_ = std::move(ema);
  iteration_ = iteration;
  std::fill(sum_.begin(), sum_.end(), 0.0);
  std::fill(count_.begin(), count_.end(), 0);
}

void PerformanceTracker::ResetToWarmup() {
  std::fill(ema_.begin(), ema_.end(), static_cast<double>(config_.max_episode_len));
  std::fill(sum_.begin(), sum_.end(), 0.0);
  std::fill(count_.begin(), count_.end(), 0);
  iteration_ = 0;
}

}  // namespace morphctl
