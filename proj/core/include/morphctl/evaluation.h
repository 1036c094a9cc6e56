// SPDX-License-Identifier: Apache-2.0
//
// Deterministic evaluation: trials run with the policy mean (or uniform
// random actions for the baseline) on terrain seeds derived from one seed, so
// different controllers see identical terrains.

#ifndef MORPHCTL_EVALUATION_H_
#define MORPHCTL_EVALUATION_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "morphctl/morphology.h"
#include "morphctl/policy.h"
#include "morphctl/ppo.h"
#include "morphctl/sim.h"

namespace morphctl {

enum class ActionMode { kPolicyMean, kUniformRandom };

struct TrialResult {
  double reward = 0.0;
  int length = 0;
  std::string reason;
};

// Trial t uses terrain seed DeriveSeed(seed, {t}).
std::vector<TrialResult> EvaluateRobot(const ActorCritic& net, const ObsNormalizers& norm,
                                       const MorphologyGraph& graph, const TaskConfig& task,
                                       int trials, std::uint64_t seed, ActionMode mode);

struct RobotScore {
  std::string id;
  double mean = 0.0;
  double std = 0.0;  // population std over trials
  std::vector<double> rewards;
};

std::vector<RobotScore> EvaluatePool(const ActorCritic& net, const ObsNormalizers& norm,
                                     const std::vector<Robot>& robots, const TaskConfig& task,
                                     int trials, std::uint64_t seed, ActionMode mode);

double MeanOf(std::span<const double> x);
double PopulationStd(std::span<const double> x);

struct ConfidenceInterval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean.
ConfidenceInterval BootstrapMeanCi(std::span<const double> values, int resamples = 10000,
                                   std::uint64_t seed = 0, double level = 0.95);

}  // namespace morphctl

#endif  // MORPHCTL_EVALUATION_H_
