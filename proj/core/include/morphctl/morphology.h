// SPDX-License-Identifier: Apache-2.0
//
// Kinematic trees of the modular design space: a sphere torso at the root and
// cylinder limbs connected by one or two actuated hinge joints per edge.

#ifndef MORPHCTL_MORPHOLOGY_H_
#define MORPHCTL_MORPHOLOGY_H_

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morphctl/rng.h"

namespace morphctl {

using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // (w, x, y, z)

enum class NodeKind { kSphere, kCylinder };

struct ModuleNode {
  NodeKind kind = NodeKind::kCylinder;
  double radius = 0.04;
  double length = 0.0;   // 0 for spheres
  double density = 750.0;
  Quat attach_orientation = {1.0, 0.0, 0.0, 0.0};
  Vec3 attach_offset = {0.0, 0.0, 0.0};

  double Mass() const;
};

struct JointSpec {
  Vec3 axis = {0.0, 1.0, 0.0};
  double range_lo = 0.0;  // radians
  double range_hi = 0.0;
  double gear = 1.0;
  double armature = 0.1;
  double damping = 0.5;
};

struct Edge {
  int parent = -1;
  int child = -1;
  std::vector<JointSpec> joints;
};

struct MorphologyGraph {
  std::string name;
  std::vector<ModuleNode> nodes;
  std::vector<Edge> edges;
  int root = 0;

  int NumJoints() const;
  // Index of the edge whose child is `node`, or -1 for the root.
  int ParentEdge(int node) const;
  // Children of `node` in edge declaration order.
  std::vector<int> Children(int node) const;
};

// Field-wise comparison with absolute numeric tolerance.
bool ApproxEqual(const MorphologyGraph& a, const MorphologyGraph& b,
                 double tol = 1e-12);

// A joint range in degrees. The default design vocabulary is the set of 13
// ranges below.
struct AngleRange {
  double lo_deg;
  double hi_deg;
};
const std::vector<AngleRange>& DefaultJointAngleRanges();

double DegToRad(double deg);
double RadToDeg(double rad);

// Parameter space for sampling and range validation. Defaults follow the
// limb shape and joint-angle vocabulary of the design space; torso, density,
// gear, armature and damping defaults are local choices.
struct SpaceConfig {
  int min_nodes = 4;
  int max_nodes = 8;
  int max_tokens = 12;  // N_max: hard bound on node count

  double limb_radius_lo = 0.03, limb_radius_hi = 0.05;
  double limb_length_lo = 0.15, limb_length_hi = 0.45;
  double torso_radius_lo = 0.05, torso_radius_hi = 0.10;
  double density_lo = 500.0, density_hi = 1000.0;
  double gear_lo = 6.0, gear_hi = 15.0;
  double armature = 0.2;
  double damping = 0.5;
  double two_joint_probability = 0.5;
  int max_children_root = 4;
  int max_children_limb = 2;

  std::vector<AngleRange> joint_ranges = DefaultJointAngleRanges();
  // When false, validation skips the limb-shape and joint-range vocabulary
  // checks (structural checks always apply).
  bool check_parameter_ranges = true;
};

struct Violation {
  std::string what;  // e.g. "not a tree", "joint count > 2"
  std::string where; // e.g. "edge 3", "node 1"
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool Contains(const std::string& needle) const;
  std::string ToString() const;
};

ValidationReport ValidateGraph(const MorphologyGraph& g,
                               const SpaceConfig& space = SpaceConfig{});

class MorphologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Node indices in depth-first order from the root. Without `sibling_shuffle`
// children are visited in edge declaration order; with it, the children of
// each node are permuted by the rng before descending.
using TokenOrder = std::vector<int>;
TokenOrder DfsTokenOrder(const MorphologyGraph& g, Rng* sibling_shuffle = nullptr);

// Re-indexes nodes into canonical depth-first declaration order and sorts
// edges by child position. Canonical graphs are fixed points.
MorphologyGraph Canonicalize(const MorphologyGraph& g);

MorphologyGraph SampleMorphology(const SpaceConfig& space, Rng& rng);

// Pitch-only rotation used by the planar reduction: a rotation by planar
// angle `phi` (counter-clockwise in the x-z plane).
Quat PlanarQuat(double phi);
// Planar angle of the limb axis (local +x) after rotation by `q`.
double PlanarAngle(const Quat& q);

}  // namespace morphctl

#endif  // MORPHCTL_MORPHOLOGY_H_
