// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc measurements: stable rank of attention maps along an episode,
// position-embedding similarity, and seed-averaged learning curves.

#ifndef MORPHCTL_ANALYSIS_H_
#define MORPHCTL_ANALYSIS_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphctl/matrix.h"
#include "morphctl/policy.h"
#include "morphctl/ppo.h"
#include "morphctl/sim.h"

namespace morphctl {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ||A||_F^2 / sigma_max^2, with sigma_max^2 the largest eigenvalue of A^T A.
double StableRank(const Matrix& a);

struct AttentionRecord {
  int step = 0;
  int layer = 0;
  Matrix attention;  // real tokens only, averaged over heads
  double stable_rank = 0.0;
};

// Runs the policy mean for `steps` steps (restarting on a new terrain seed if
// an episode ends) and records every layer's attention map.
std::vector<AttentionRecord> AttentionEpisodeTrace(const ActorCritic& net,
                                                   const ObsNormalizers& norm,
                                                   const MorphologyGraph& graph,
                                                   const TaskConfig& task, int steps,
                                                   std::uint64_t seed);

// Cosine similarity between rows. Rows with zero norm give 0 entries and are
// counted in `zero_rows` when provided.
Matrix PosEmbedCosine(const Matrix& w_pos, int* zero_rows = nullptr);

struct Curve {
  std::string key;
  std::vector<int> iterations;
  std::vector<double> mean;
  std::vector<double> std;  // population std over runs
  std::vector<int> runs;    // runs with a value at this iteration
};

// Each run is a list of metrics records with an "iteration" field. Null
// values are skipped; iteration grids must agree across runs.
Curve SummarizeMetrics(const std::vector<std::vector<nlohmann::json>>& runs,
                       const std::string& key);

std::vector<nlohmann::json> ReadJsonLines(const std::string& path);

}  // namespace morphctl

#endif  // MORPHCTL_ANALYSIS_H_
