// SPDX-License-Identifier: Apache-2.0
//
// Deterministic planar reduced-coordinate simulator for modular robots.
//
// Generalized coordinates are the root pose (x, z, pitch) plus one angle per
// hinge joint; every hinge rotates about the plane normal. The mass matrix is
// diagonal: the root translations carry the total mass, the pitch carries the
// configuration-dependent moment of inertia about the root, and each joint
// carries (child subtree mass) * (child limb length)^2 + armature. Gravity,
// actuation and ground contact enter as generalized forces through exact
// planar Jacobians. Joint damping and the diagonal part of contact damping and
// friction are integrated implicitly; joint limits are hard clamps.

#ifndef MORPHCTL_SIM_H_
#define MORPHCTL_SIM_H_

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphctl/morphology.h"
#include "morphctl/terrain.h"

namespace morphctl {

struct TaskConfig {
  Task task = Task::kFlat;
  int episode_horizon = 1000;
  double termination_fraction = 0.5;
  double w_forward = 1.0;
  double w_energy = 1e-3;
  double dt = 0.01;
  int substeps = 4;
  double gravity = 9.81;
  double contact_stiffness = 2e4;  // N/m
  double contact_damping = 200.0;  // N s/m
  double friction = 1.0;
  double slip_velocity = 0.05;     // m/s, tanh regularization of Coulomb friction
  double max_joint_speed = 50.0;   // rad/s
  double max_root_speed = 20.0;    // m/s

  // Horizon 1000; fall threshold 0.3 for variable terrain and escape, else 0.5.
  static TaskConfig ForTask(Task task);
};

using Vec2 = std::array<double, 2>;  // (x, z)

struct BodyPose {
  Vec2 origin{};      // sphere center or limb pivot
  double angle = 0.0; // absolute planar angle
  Vec2 com{};
  Vec2 com_velocity{};
  Vec2 origin_velocity{};
  double angular_velocity = 0.0;
};

struct SimState {
  double x = 0.0, z = 0.0, pitch = 0.0;
  double vx = 0.0, vz = 0.0, pitch_rate = 0.0;
  std::vector<double> q;
  std::vector<double> qd;
  int step = 0;
  double initial_torso_height = 0.0;
  double spawn_x = 0.0;
  std::vector<BodyPose> bodies;  // indexed by node, refreshed by forward kinematics
};

struct JointInfo {
  int edge = 0;
  int slot = 0;
  int node = 0;  // child node driven by this joint
  double lo = 0.0, hi = 0.0;
  double gear = 1.0;
  double damping = 0.0;
  double inertia = 0.0;  // diagonal mass entry
};

// Kinematic and inertial data derived once from a graph.
class PlanarModel {
 public:
  explicit PlanarModel(const MorphologyGraph& graph);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_joints() const { return static_cast<int>(joints_.size()); }
  const std::vector<JointInfo>& joints() const { return joints_; }
  // Joint indices (into joints()) of the edge entering `node`.
  const std::vector<int>& node_joints(int node) const { return node_joints_[node]; }
  int root() const { return root_; }
  double total_mass() const { return total_mass_; }
  const MorphologyGraph& graph() const { return graph_; }

  void ForwardKinematics(SimState& s) const;

  struct Contact {
    int node;
    Vec2 local;  // point in the body frame (x along the limb axis)
    double radius;
  };
  const std::vector<Contact>& contacts() const { return contacts_; }

  // World position of a body-fixed point.
  Vec2 PointWorld(const SimState& s, int node, const Vec2& local) const;
  // Generalized force (size 3 + joints) produced by force f applied at world
  // point p on body `node`, accumulated into `out`.
  void AccumulateForce(const SimState& s, int node, const Vec2& p, const Vec2& f,
                       std::span<double> out) const;
  // Jacobian column dot products: out[i] = J_i(p) . dir.
  void ProjectJacobian(const SimState& s, int node, const Vec2& p, const Vec2& dir,
                       std::span<double> out) const;

 private:
  struct NodeData {
    int parent = -1;
    NodeKind kind = NodeKind::kCylinder;
    Vec2 offset{};        // pivot in parent frame
    double rest_angle = 0.0;
    double radius = 0.0;
    double length = 0.0;
    double mass = 0.0;
    double inertia = 0.0;  // about own center of mass
    std::vector<int> chain;  // non-root ancestors-or-self, nearest first
  };

  MorphologyGraph graph_;
  std::vector<NodeData> nodes_;
  std::vector<int> order_;  // parents before children
  std::vector<JointInfo> joints_;
  std::vector<std::vector<int>> node_joints_;
  std::vector<Contact> contacts_;
  int root_ = 0;
  double total_mass_ = 0.0;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  std::string reason;  // "fall", "horizon" or empty
  double progress = 0.0;  // forward displacement (or arc-distance gain)
  double energy = 0.0;    // sum |tau * qdot|
};

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Environment {
 public:
  Environment(const MorphologyGraph& graph, const TaskConfig& config, std::uint64_t seed);

  // Regenerates the terrain from `seed` and poses the robot: joints at the
  // middle of their ranges, lowest point 1 mm above the ground.
  const SimState& Reset(std::uint64_t seed);
  StepResult Step(std::span<const double> action);

  const SimState& state() const { return state_; }
  // Replaces the dynamic state (kinematics are recomputed).
  void SetState(const SimState& s);

  const PlanarModel& model() const { return model_; }
  const Heightfield& terrain() const { return terrain_; }
  const TaskConfig& config() const { return config_; }
  int num_joints() const { return model_.num_joints(); }
  bool done() const { return done_; }
  double TorsoHeight() const;

 private:
  void Substep(std::span<const double> torque, double h);
  double Distance() const;

  PlanarModel model_;
  TaskConfig config_;
  Heightfield terrain_;
  SimState state_;
  bool done_ = false;
  std::vector<double> force_, diag_, mass_, scratch_n_, scratch_t_;
};

}  // namespace morphctl

#endif  // MORPHCTL_SIM_H_
