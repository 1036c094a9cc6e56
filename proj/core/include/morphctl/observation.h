// SPDX-License-Identifier: Apache-2.0
//
// Per-module local observations (morphology + proprioception), the terrain
// profile, padding masks, and running observation normalization.
//
// Token row layout (width 47):
//   [0, 30)  morphology: kind one-hot (2), radius, length, density,
//            attach quaternion (4), attach offset (3), then two joint slots of
//            (present, axis x/y/z, range lo/hi, gear, armature, damping)
//   [30, 47) proprioception: position (3), orientation quaternion (4),
//            linear velocity (3), angular velocity (3), then two joint slots
//            of (q, qdot)
// Joint data sits on the child module of each edge; the root's slots are 0.

#ifndef MORPHCTL_OBSERVATION_H_
#define MORPHCTL_OBSERVATION_H_

#include <array>
#include <stdexcept>
#include <vector>

#include "morphctl/matrix.h"
#include "morphctl/morphology.h"
#include "morphctl/sim.h"
#include "morphctl/terrain.h"

namespace morphctl {

inline constexpr int kLayoutVersion = 1;
inline constexpr int kMorphologyWidth = 30;
inline constexpr int kProprioWidth = 17;
inline constexpr int kLocalWidth = kMorphologyWidth + kProprioWidth;
inline constexpr int kJointSlots = 2;
inline constexpr int kJointSlotWidth = 9;
inline constexpr int kJointSlotOffset = 12;  // first joint slot within the morphology block

struct GlobalGrid {
  std::vector<double> offsets;  // forward offsets from the root, meters
  static GlobalGrid Default();  // 23 offsets from 1 m behind to 4 m ahead
};

struct ObservationBundle {
  Matrix local;                 // N_max x 47, zero rows for padding
  std::vector<bool> mask;       // N_max, true = real module
  Vector global;                // G terrain samples
  std::vector<std::array<bool, kJointSlots>> joint_mask;  // N_max x 2

  int num_tokens() const;  // real modules
  int num_live_joints() const;
};

class ObservationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Matrix BuildMorphologyFeatures(const MorphologyGraph& g, const TokenOrder& order);
Matrix BuildProprioception(const PlanarModel& model, const SimState& state,
                           const TokenOrder& order);
ObservationBundle AssembleLocalObs(const Matrix& morphology, const Matrix& proprio,
                                   int max_tokens);
Vector BuildGlobalObs(const SimState& state, const Heightfield& field, const GlobalGrid& grid);

// Environment joint index for every live action entry, in token order.
std::vector<int> LiveJointOrder(const PlanarModel& model, const TokenOrder& order);

// Caches the time-invariant morphology block for one robot and token order.
class ObservationBuilder {
 public:
  ObservationBuilder(const PlanarModel& model, TokenOrder order, int max_tokens,
                     GlobalGrid grid = GlobalGrid::Default());

  ObservationBundle Build(const SimState& state, const Heightfield& field) const;
  const TokenOrder& order() const { return order_; }
  const std::vector<int>& live_joints() const { return live_joints_; }

 private:
  const PlanarModel* model_;
  TokenOrder order_;
  int max_tokens_;
  GlobalGrid grid_;
  Matrix morphology_;
  std::vector<int> live_joints_;
};

// Streaming per-dimension mean and variance (Chan et al. parallel update).
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim, double clip = 10.0);

  // Rows of `batch` are samples. Rows with row_mask[i] == false are skipped.
  void Update(const Matrix& batch, const std::vector<bool>* row_mask = nullptr);
  void UpdateOne(const Eigen::Ref<const RowVector>& x);
  // clip((x - mean) / sqrt(var + 1e-8), -clip, clip), applied row-wise.
  Matrix Apply(const Matrix& x) const;
  Vector Apply(const Vector& x) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Vector& var() const { return var_; }
  double count() const { return count_; }
  double clip() const { return clip_; }
  void SetState(Vector mean, Vector var, double count);

 private:
  Vector mean_;
  Vector var_;
  double count_ = 0.0;
  double clip_ = 10.0;
};

// Normalizes a bundle in place of a copy: local rows (real tokens only) with
// `local`, the terrain vector with `global`. Padding rows stay zero.
ObservationBundle NormalizeBundle(const ObservationBundle& raw, const RunningNormalizer& local,
                                  const RunningNormalizer& global);

}  // namespace morphctl

#endif  // MORPHCTL_OBSERVATION_H_
