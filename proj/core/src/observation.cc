// SPDX-License-Identifier: Apache-2.0

#include "morphctl/observation.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace morphctl {

GlobalGrid GlobalGrid::Default() {
  GlobalGrid g;
  g.offsets = {-1.0, -0.5, -0.25};
  for (int i = 0; i <= 10; ++i) g.offsets.push_back(0.1 * i);
  for (int i = 1; i <= 5; ++i) g.offsets.push_back(1.0 + 0.2 * i);
  for (double d : {2.5, 3.0, 3.5, 4.0}) g.offsets.push_back(d);
  return g;
}

int ObservationBundle::num_tokens() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), true));
}

int ObservationBundle::num_live_joints() const {
  int n = 0;
  for (const auto& slots : joint_mask) n += slots[0] + slots[1];
  return n;
}

Matrix BuildMorphologyFeatures(const MorphologyGraph& g, const TokenOrder& order) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(order.size()), kMorphologyWidth);
  for (std::size_t t = 0; t < order.size(); ++t) {
    const int v = order[t];
    const ModuleNode& m = g.nodes[v];
    auto row = out.row(static_cast<Eigen::Index>(t));
    row(m.kind == NodeKind::kSphere ? 0 : 1) = 1.0;
    row(2) = m.radius;
    row(3) = m.length;
    row(4) = m.density;
    for (int i = 0; i < 4; ++i) row(5 + i) = m.attach_orientation[i];
    for (int i = 0; i < 3; ++i) row(9 + i) = m.attach_offset[i];
    const int e = g.ParentEdge(v);
    if (e < 0) continue;
    const auto& joints = g.edges[e].joints;
    for (std::size_t s = 0; s < joints.size() && s < kJointSlots; ++s) {
      const JointSpec& j = joints[s];
      const int c = kJointSlotOffset + static_cast<int>(s) * kJointSlotWidth;
      row(c) = 1.0;
      for (int i = 0; i < 3; ++i) row(c + 1 + i) = j.axis[i];
      row(c + 4) = j.range_lo;
      row(c + 5) = j.range_hi;
      row(c + 6) = j.gear;
      row(c + 7) = j.armature;
      row(c + 8) = j.damping;
    }
  }
  return out;
}

namespace {

// World angle of each body at zero joint angles and zero pitch.
std::vector<double> RestAngles(const MorphologyGraph& g) {
  std::vector<double> rest(g.nodes.size(), 0.0);
  for (int v : DfsTokenOrder(g)) {
    const int e = g.ParentEdge(v);
    if (e >= 0) rest[v] = rest[g.edges[e].parent] + PlanarAngle(g.nodes[v].attach_orientation);
  }
  return rest;
}

}  // namespace

Matrix BuildProprioception(const PlanarModel& model, const SimState& state,
                           const TokenOrder& order) {
  const std::vector<double> rest = RestAngles(model.graph());
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(order.size()), kProprioWidth);
  for (std::size_t t = 0; t < order.size(); ++t) {
    const int v = order[t];
    const BodyPose& b = state.bodies[v];
    auto row = out.row(static_cast<Eigen::Index>(t));
    // x is taken relative to the root so features stay bounded as the robot travels.
    row(0) = b.com[0] - state.x;
    row(1) = 0.0;
    row(2) = b.com[1];
    const Quat q = PlanarQuat(b.angle - rest[v]);
    for (int i = 0; i < 4; ++i) row(3 + i) = q[i];
    row(7) = b.com_velocity[0];
    row(8) = 0.0;
    row(9) = b.com_velocity[1];
    // PlanarQuat(phi) turns about -y, so the planar rate maps to -omega_y.
    row(10) = 0.0;
    row(11) = -b.angular_velocity;
    row(12) = 0.0;
    const auto& js = model.node_joints(v);
    for (std::size_t s = 0; s < js.size() && s < kJointSlots; ++s) {
      row(13 + 2 * s) = state.q[js[s]];
      row(14 + 2 * s) = state.qd[js[s]];
    }
  }
  return out;
}

ObservationBundle AssembleLocalObs(const Matrix& morphology, const Matrix& proprio,
                                   int max_tokens) {
  const Eigen::Index n = morphology.rows();
  if (proprio.rows() != n) {
    throw ObservationError("morphology rows " + std::to_string(n) + " != proprioception rows " +
                           std::to_string(proprio.rows()));
  }
  if (morphology.cols() != kMorphologyWidth || proprio.cols() != kProprioWidth) {
    throw ObservationError("unexpected feature width");
  }
  if (n > max_tokens) {
    throw ObservationError(std::to_string(n) + " modules exceed N_max " +
                           std::to_string(max_tokens));
  }
  ObservationBundle b;
  b.local = Matrix::Zero(max_tokens, kLocalWidth);
  b.local.topLeftCorner(n, kMorphologyWidth) = morphology;
  b.local.block(0, kMorphologyWidth, n, kProprioWidth) = proprio;
  b.mask.assign(max_tokens, false);
  b.joint_mask.assign(max_tokens, {false, false});
  for (Eigen::Index t = 0; t < n; ++t) {
    b.mask[t] = true;
    for (int s = 0; s < kJointSlots; ++s) {
      b.joint_mask[t][s] = morphology(t, kJointSlotOffset + s * kJointSlotWidth) > 0.5;
    }
  }
  return b;
}

Vector BuildGlobalObs(const SimState& state, const Heightfield& field, const GlobalGrid& grid) {
  Vector out(static_cast<Eigen::Index>(grid.offsets.size()));
  const double base = field.Height(state.x);
  for (std::size_t i = 0; i < grid.offsets.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = field.Height(state.x + grid.offsets[i]) - base;
  }
  return out;
}

std::vector<int> LiveJointOrder(const PlanarModel& model, const TokenOrder& order) {
  std::vector<int> live;
  for (int v : order) {
    for (int j : model.node_joints(v)) live.push_back(j);
  }
  return live;
}

ObservationBuilder::ObservationBuilder(const PlanarModel& model, TokenOrder order,
                                       int max_tokens, GlobalGrid grid)
    : model_(&model), order_(std::move(order)), max_tokens_(max_tokens), grid_(std::move(grid)) {
  if (static_cast<int>(order_.size()) > max_tokens_) {
    throw ObservationError(std::to_string(order_.size()) + " modules exceed N_max " +
                           std::to_string(max_tokens_));
  }
  morphology_ = BuildMorphologyFeatures(model.graph(), order_);
  live_joints_ = LiveJointOrder(model, order_);
}

ObservationBundle ObservationBuilder::Build(const SimState& state, const Heightfield& field) const {
  ObservationBundle b =
      AssembleLocalObs(morphology_, BuildProprioception(*model_, state, order_), max_tokens_);
  b.global = BuildGlobalObs(state, field, grid_);
  return b;
}

RunningNormalizer::RunningNormalizer(int dim, double clip)
    : mean_(Vector::Zero(dim)), var_(Vector::Ones(dim)), clip_(clip) {}

void RunningNormalizer::Update(const Matrix& batch, const std::vector<bool>* row_mask) {
  if (batch.cols() != dim()) {
    throw ObservationError("normalizer width " + std::to_string(dim()) + " != batch width " +
                           std::to_string(batch.cols()));
  }
  Vector sum = Vector::Zero(dim());
  double n = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    if (row_mask && !(*row_mask)[i]) continue;
    sum += batch.row(i).transpose();
    n += 1.0;
  }
  if (n == 0.0) return;
  const Vector bmean = sum / n;
  Vector m2 = Vector::Zero(dim());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    if (row_mask && !(*row_mask)[i]) continue;
    m2 += (batch.row(i).transpose() - bmean).cwiseAbs2();
  }
  const double total = count_ + n;
  const Vector delta = bmean - mean_;
  const Vector merged = var_ * count_ + m2 + delta.cwiseAbs2() * (count_ * n / total);
  mean_ += delta * (n / total);
  var_ = (merged / total).cwiseMax(0.0);
  count_ = total;
}

void RunningNormalizer::UpdateOne(const Eigen::Ref<const RowVector>& x) {
  Matrix m = x;
  Update(m);
}

Matrix RunningNormalizer::Apply(const Matrix& x) const {
  const RowVector mu = mean_.transpose();
  const RowVector inv = (var_.array() + 1e-8).rsqrt().matrix().transpose();
  Matrix out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = ((x.row(i) - mu).cwiseProduct(inv)).cwiseMax(-clip_).cwiseMin(clip_);
  }
  return out;
}

Vector RunningNormalizer::Apply(const Vector& x) const {
  return ((x - mean_).array() * (var_.array() + 1e-8).rsqrt())
      .max(-clip_)
      .min(clip_)
      .matrix();
}

void RunningNormalizer::SetState(Vector mean, Vector var, double count) {
  if (mean.size() != var.size()) throw ObservationError("normalizer state size mismatch");
  mean_ = std::move(mean);
  var_ = std::move(var);
  count_ = count;
}

ObservationBundle NormalizeBundle(const ObservationBundle& raw, const RunningNormalizer& local,
                                  const RunningNormalizer& global) {
  ObservationBundle out = raw;
  const Matrix normed = local.Apply(raw.local);
  for (Eigen::Index t = 0; t < raw.local.rows(); ++t) {
    if (raw.mask[t]) out.local.row(t) = normed.row(t);
  }
  out.global = global.Apply(raw.global);
  return out;
}

}  // namespace morphctl
