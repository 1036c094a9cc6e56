// SPDX-License-Identifier: Apache-2.0

#include "morphctl/sim.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace morphctl {
namespace {

Vec2 Rotate(double angle, const Vec2& v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}
Vec2 Perp(const Vec2& v) { return {-v[1], v[0]}; }
Vec2 Sub(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
Vec2 Add(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec2 Scale(double k, const Vec2& a) { return {k * a[0], k * a[1]}; }
double Dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
double Cross(const Vec2& r, const Vec2& f) { return r[0] * f[1] - r[1] * f[0]; }

}  // namespace

TaskConfig TaskConfig::ForTask(Task task) {
  TaskConfig c;
  c.task = task;
  c.termination_fraction = (task == Task::kVariable || task == Task::kEscape) ? 0.3 : 0.5;
  return c;
}

PlanarModel::PlanarModel(const MorphologyGraph& graph) : graph_(graph), root_(graph.root) {
  order_ = DfsTokenOrder(graph_);
  const int n = static_cast<int>(graph_.nodes.size());
  nodes_.resize(n);
  node_joints_.assign(n, {});
  for (int v = 0; v < n; ++v) {
    const ModuleNode& m = graph_.nodes[v];
    NodeData& d = nodes_[v];
    d.kind = m.kind;
    d.radius = m.radius;
    d.length = m.kind == NodeKind::kSphere ? 0.0 : m.length;
    d.mass = m.Mass();
    d.inertia = m.kind == NodeKind::kSphere ? 0.4 * d.mass * m.radius * m.radius
                                            : d.mass * d.length * d.length / 12.0;
    d.offset = {m.attach_offset[0], m.attach_offset[2]};
    d.rest_angle = v == root_ ? 0.0 : PlanarAngle(m.attach_orientation);
    total_mass_ += d.mass;
  }
  for (const Edge& e : graph_.edges) nodes_[e.child].parent = e.parent;
  for (int v = 0; v < n; ++v) {
    for (int w = v; w != root_ && w >= 0; w = nodes_[w].parent) nodes_[v].chain.push_back(w);
  }

  // Subtree masses, children after parents in order_.
  std::vector<double> subtree(n, 0.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    subtree[*it] += nodes_[*it].mass;
    if (nodes_[*it].parent >= 0) subtree[nodes_[*it].parent] += subtree[*it];
  }

  for (std::size_t ei = 0; ei < graph_.edges.size(); ++ei) {
    const Edge& e = graph_.edges[ei];
    for (std::size_t s = 0; s < e.joints.size(); ++s) {
      const JointSpec& js = e.joints[s];
      JointInfo j;
      j.edge = static_cast<int>(ei);
      j.slot = static_cast<int>(s);
      j.node = e.child;
      j.lo = js.range_lo;
      j.hi = js.range_hi;
      j.gear = js.gear;
      j.damping = js.damping;
      const double len = nodes_[e.child].length;
      j.inertia = subtree[e.child] * len * len + js.armature;
      node_joints_[e.child].push_back(static_cast<int>(joints_.size()));
      joints_.push_back(j);
    }
  }

  for (int v : order_) {
    const NodeData& d = nodes_[v];
    contacts_.push_back({v, {0.0, 0.0}, d.radius});
    if (d.kind == NodeKind::kCylinder) contacts_.push_back({v, {d.length, 0.0}, d.radius});
  }
}

void PlanarModel::ForwardKinematics(SimState& s) const {
  s.bodies.resize(nodes_.size());
  for (int v : order_) {
    const NodeData& d = nodes_[v];
    BodyPose& b = s.bodies[v];
    if (v == root_) {
      b.origin = {s.x, s.z};
      b.angle = s.pitch;
      b.origin_velocity = {s.vx, s.vz};
      b.angular_velocity = s.pitch_rate;
    } else {
      const BodyPose& p = s.bodies[d.parent];
      const Vec2 r = Rotate(p.angle, d.offset);
      b.origin = Add(p.origin, r);
      b.origin_velocity = Add(p.origin_velocity, Scale(p.angular_velocity, Perp(r)));
      b.angle = p.angle + d.rest_angle;
      b.angular_velocity = p.angular_velocity;
      for (int j : node_joints_[v]) {
        b.angle += s.q[j];
        b.angular_velocity += s.qd[j];
      }
    }
    const Vec2 arm = Rotate(b.angle, {0.5 * d.length, 0.0});
    b.com = Add(b.origin, arm);
    b.com_velocity = Add(b.origin_velocity, Scale(b.angular_velocity, Perp(arm)));
  }
}

Vec2 PlanarModel::PointWorld(const SimState& s, int node, const Vec2& local) const {
  const BodyPose& b = s.bodies[node];
  return Add(b.origin, Rotate(b.angle, local));
}

void PlanarModel::AccumulateForce(const SimState& s, int node, const Vec2& p, const Vec2& f,
                                  std::span<double> out) const {
  out[0] += f[0];
  out[1] += f[1];
  out[2] += Cross(Sub(p, s.bodies[root_].origin), f);
  for (int w : nodes_[node].chain) {
    const double torque = Cross(Sub(p, s.bodies[w].origin), f);
    for (int j : node_joints_[w]) out[3 + j] += torque;
  }
}

void PlanarModel::ProjectJacobian(const SimState& s, int node, const Vec2& p, const Vec2& dir,
                                  std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  AccumulateForce(s, node, p, dir, out);
}

Environment::Environment(const MorphologyGraph& graph, const TaskConfig& config,
                         std::uint64_t seed)
    : model_(graph), config_(config) {
  Reset(seed);
}

const SimState& Environment::Reset(std::uint64_t seed) {
  Rng rng(seed);
  terrain_ = GenerateTerrain(config_.task, rng);

  const int nj = model_.num_joints();
  state_ = SimState{};
  state_.q.resize(nj);
  state_.qd.assign(nj, 0.0);
  for (int j = 0; j < nj; ++j) {
    state_.q[j] = 0.5 * (model_.joints()[j].lo + model_.joints()[j].hi);
  }
  state_.x = terrain_.spawn_x();
  state_.spawn_x = state_.x;
  state_.z = 0.0;
  model_.ForwardKinematics(state_);

  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& c : model_.contacts()) {
    const Vec2 p = model_.PointWorld(state_, c.node, c.local);
    lowest = std::min(lowest, p[1] - c.radius - terrain_.Height(p[0]));
  }
  state_.z = -lowest + 0.001;
  model_.ForwardKinematics(state_);
  state_.initial_torso_height = TorsoHeight();
  done_ = false;

  const std::size_t ndof = 3 + static_cast<std::size_t>(nj);
  force_.assign(ndof, 0.0);
  diag_.assign(ndof, 0.0);
  mass_.assign(ndof, 0.0);
  scratch_n_.assign(ndof, 0.0);
  scratch_t_.assign(ndof, 0.0);
  return state_;
}

void Environment::SetState(const SimState& s) {
  state_ = s;
  model_.ForwardKinematics(state_);
  done_ = false;
}

double Environment::TorsoHeight() const { return state_.z - terrain_.Height(state_.x); }

double Environment::Distance() const {
  if (config_.task == Task::kEscape) {
    return std::abs(terrain_.ArcLength(state_.x) - terrain_.ArcLength(state_.spawn_x));
  }
  return state_.x;
}

void Environment::Substep(std::span<const double> torque, double h) {
  const int nj = model_.num_joints();
  const int root = model_.root();
  SimState& s = state_;
  std::fill(force_.begin(), force_.end(), 0.0);
  std::fill(diag_.begin(), diag_.end(), 0.0);

  const MorphologyGraph& g = model_.graph();
  double pitch_inertia = 0.0;
  for (int v = 0; v < model_.num_nodes(); ++v) {
    const ModuleNode& m = g.nodes[v];
    const double mass = m.Mass();
    const BodyPose& b = s.bodies[v];
    const Vec2 r = Sub(b.com, s.bodies[root].origin);
    const double own = m.kind == NodeKind::kSphere ? 0.4 * mass * m.radius * m.radius
                                                   : mass * m.length * m.length / 12.0;
    pitch_inertia += mass * Dot(r, r) + own;
    model_.AccumulateForce(s, v, b.com, {0.0, -mass * config_.gravity}, force_);
  }
  mass_[0] = mass_[1] = model_.total_mass();
  mass_[2] = pitch_inertia;

  for (int j = 0; j < nj; ++j) {
    const JointInfo& ji = model_.joints()[j];
    mass_[3 + j] = ji.inertia;
    force_[3 + j] += torque[j] - ji.damping * s.qd[j];
    diag_[3 + j] += ji.damping;
  }

  for (const auto& c : model_.contacts()) {
    const Vec2 center = model_.PointWorld(s, c.node, c.local);
    const double slope = terrain_.Slope(center[0]);
    const double norm = std::sqrt(1.0 + slope * slope);
    const Vec2 n = {-slope / norm, 1.0 / norm};
    const Vec2 t = {1.0 / norm, slope / norm};
    const double gap = (center[1] - terrain_.Height(center[0])) / norm;
    const double depth = c.radius - gap;
    if (depth <= 0.0) continue;
    const Vec2 p = Sub(center, Scale(c.radius, n));
    const BodyPose& b = s.bodies[c.node];
    const Vec2 v = Add(b.origin_velocity, Scale(b.angular_velocity, Perp(Sub(p, b.origin))));
    const double vn = Dot(v, n);
    const double vt = Dot(v, t);
    const double fn = config_.contact_stiffness * depth - config_.contact_damping * vn;
    if (fn <= 0.0) continue;
    const double th = std::tanh(vt / config_.slip_velocity);
    const double ft = -config_.friction * fn * th;
    model_.AccumulateForce(s, c.node, p, Add(Scale(fn, n), Scale(ft, t)), force_);

    model_.ProjectJacobian(s, c.node, p, n, scratch_n_);
    model_.ProjectJacobian(s, c.node, p, t, scratch_t_);
    const double friction_slope = config_.friction * fn * (1.0 - th * th) / config_.slip_velocity;
    for (std::size_t i = 0; i < diag_.size(); ++i) {
      diag_[i] += config_.contact_damping * scratch_n_[i] * scratch_n_[i] +
                  friction_slope * scratch_t_[i] * scratch_t_[i];
    }
  }

  // Linearly implicit in the diagonal damping terms.
  auto update = [&](std::size_t i, double vel) {
    return (mass_[i] * vel + h * (force_[i] + diag_[i] * vel)) / (mass_[i] + h * diag_[i]);
  };
  const double vmax = config_.max_root_speed;
  const double wmax = config_.max_joint_speed;
  s.vx = std::clamp(update(0, s.vx), -vmax, vmax);
  s.vz = std::clamp(update(1, s.vz), -vmax, vmax);
  s.pitch_rate = std::clamp(update(2, s.pitch_rate), -wmax, wmax);
  for (int j = 0; j < nj; ++j) s.qd[j] = std::clamp(update(3 + j, s.qd[j]), -wmax, wmax);

  s.x += h * s.vx;
  s.z += h * s.vz;
  s.pitch += h * s.pitch_rate;
  for (int j = 0; j < nj; ++j) {
    const JointInfo& ji = model_.joints()[j];
    s.q[j] += h * s.qd[j];
    if (s.q[j] < ji.lo) {
      s.q[j] = ji.lo;
      s.qd[j] = std::max(s.qd[j], 0.0);
    } else if (s.q[j] > ji.hi) {
      s.q[j] = ji.hi;
      s.qd[j] = std::min(s.qd[j], 0.0);
    }
  }
  model_.ForwardKinematics(s);
}

StepResult Environment::Step(std::span<const double> action) {
  const int nj = model_.num_joints();
  if (done_) throw SimError("step called on a finished episode");
  if (static_cast<int>(action.size()) != nj) {
    throw SimError("action length " + std::to_string(action.size()) + " != joint count " +
                   std::to_string(nj));
  }
  std::vector<double> torque(nj);
  for (int j = 0; j < nj; ++j) {
    if (!std::isfinite(action[j])) throw SimError("non-finite action at joint " + std::to_string(j));
    torque[j] = std::clamp(action[j], -1.0, 1.0) * model_.joints()[j].gear;
  }

  const double before = Distance();
  const double h = config_.dt / config_.substeps;
  for (int k = 0; k < config_.substeps; ++k) Substep(torque, h);

  StepResult r;
  for (int j = 0; j < nj; ++j) r.energy += std::abs(torque[j] * state_.qd[j]);
  r.progress = Distance() - before;
  r.reward = config_.w_forward * r.progress / config_.dt - config_.w_energy * r.energy;
  ++state_.step;

  const bool finite = std::isfinite(state_.x) && std::isfinite(state_.z) &&
                      std::isfinite(state_.pitch) && std::isfinite(r.reward);
  if (!finite) throw SimError("simulation diverged at step " + std::to_string(state_.step));

  if (TorsoHeight() < config_.termination_fraction * state_.initial_torso_height) {
    r.done = true;
    r.reason = "fall";
  } else if (state_.step >= config_.episode_horizon) {
    r.done = true;
    r.reason = "horizon";
  }
  done_ = r.done;
  return r;
}

}  // namespace morphctl
