// SPDX-License-Identifier: Apache-2.0

#include "morphctl/morphology.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace morphctl {

double ModuleNode::Mass() const {
  constexpr double kPi = std::numbers::pi;
  if (kind == NodeKind::kSphere) return density * 4.0 / 3.0 * kPi * radius * radius * radius;
  return density * kPi * radius * radius * length;
}

int MorphologyGraph::NumJoints() const {
  int n = 0;
  for (const Edge& e : edges) n += static_cast<int>(e.joints.size());
  return n;
}

int MorphologyGraph::ParentEdge(int node) const {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].child == node) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> MorphologyGraph::Children(int node) const {
  std::vector<int> out;
  for (const Edge& e : edges) {
    if (e.parent == node) out.push_back(e.child);
  }
  return out;
}

namespace {

bool Close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

template <std::size_t N>
bool CloseArray(const std::array<double, N>& a, const std::array<double, N>& b,
                double tol) {
  for (std::size_t i = 0; i < N; ++i) {
    if (!Close(a[i], b[i], tol)) return false;
  }
  return true;
}

template <std::size_t N>
double Norm(const std::array<double, N>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

bool ApproxEqual(const MorphologyGraph& a, const MorphologyGraph& b, double tol) {
  if (a.name != b.name || a.root != b.root) return false;
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const ModuleNode& x = a.nodes[i];
    const ModuleNode& y = b.nodes[i];
    if (x.kind != y.kind || !Close(x.radius, y.radius, tol) ||
        !Close(x.length, y.length, tol) || !Close(x.density, y.density, tol) ||
        !CloseArray(x.attach_orientation, y.attach_orientation, tol) ||
        !CloseArray(x.attach_offset, y.attach_offset, tol)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.edges.size(); ++i) {
    const Edge& x = a.edges[i];
    const Edge& y = b.edges[i];
    if (x.parent != y.parent || x.child != y.child || x.joints.size() != y.joints.size()) {
      return false;
    }
    for (std::size_t j = 0; j < x.joints.size(); ++j) {
      const JointSpec& p = x.joints[j];
      const JointSpec& q = y.joints[j];
      if (!CloseArray(p.axis, q.axis, tol) || !Close(p.range_lo, q.range_lo, tol) ||
          !Close(p.range_hi, q.range_hi, tol) || !Close(p.gear, q.gear, tol) ||
          !Close(p.armature, q.armature, tol) || !Close(p.damping, q.damping, tol)) {
        return false;
      }
    }
  }
  return true;
}

const std::vector<AngleRange>& DefaultJointAngleRanges() {
  static const std::vector<AngleRange> kRanges = {
      {-30, 0},  {0, 30},  {-30, 30}, {-45, 45}, {-45, 0}, {0, 45},  {-60, 0},
      {0, 60},   {-60, 60}, {-90, 0},  {0, 90},   {-60, 30}, {-30, 60}};
  return kRanges;
}

double DegToRad(double deg) { return deg * std::numbers::pi / 180.0; }
double RadToDeg(double rad) { return rad * 180.0 / std::numbers::pi; }

bool ValidationReport::Contains(const std::string& needle) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) {
    return v.what.find(needle) != std::string::npos;
  });
}

std::string ValidationReport::ToString() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].where << ": " << violations[i].what;
  }
  return os.str();
}

ValidationReport ValidateGraph(const MorphologyGraph& g, const SpaceConfig& space) {
  ValidationReport report;
  auto add = [&](std::string what, std::string where) {
    report.violations.push_back({std::move(what), std::move(where)});
  };
  const int n = static_cast<int>(g.nodes.size());
  if (n == 0) {
    add("empty graph", "graph");
    return report;
  }
  if (n > space.max_tokens) {
    add("node count > N_max (" + std::to_string(n) + " > " +
            std::to_string(space.max_tokens) + ")",
        "graph");
  }
  const bool root_ok = g.root >= 0 && g.root < n;
  if (!root_ok) add("root index out of range", "graph");

  // Structure: each non-root node has exactly one parent, and everything is
  // reachable from the root.
  std::vector<int> parent_count(n, 0);
  bool structural_error = false;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const Edge& e = g.edges[i];
    const std::string where = "edge " + std::to_string(i);
    if (e.parent < 0 || e.parent >= n || e.child < 0 || e.child >= n) {
      add("endpoint index out of range", where);
      structural_error = true;
      continue;
    }
    if (e.parent == e.child) {
      add("not a tree (self loop)", where);
      structural_error = true;
    }
    ++parent_count[e.child];
    if (e.joints.size() > 2) add("joint count > 2", where);
    if (e.joints.empty()) add("joint count < 1", where);
  }
  if (root_ok && !structural_error) {
    bool tree = static_cast<int>(g.edges.size()) == n - 1 && parent_count[g.root] == 0;
    for (int v = 0; v < n && tree; ++v) {
      if (v != g.root && parent_count[v] != 1) tree = false;
    }
    if (tree) {
      std::vector<bool> seen(n, false);
      std::vector<int> stack = {g.root};
      int visited = 0;
      while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        if (seen[v]) {
          tree = false;
          break;
        }
        seen[v] = true;
        ++visited;
        for (const Edge& e : g.edges) {
          if (e.parent == v) stack.push_back(e.child);
        }
      }
      tree = tree && visited == n;
    }
    if (!tree) add("not a tree", "graph");
  }

  constexpr double kTol = 1e-12;
  auto in_range = [&](double x, double lo, double hi) {
    return x >= lo - kTol && x <= hi + kTol;
  };
  for (int i = 0; i < n; ++i) {
    const ModuleNode& m = g.nodes[i];
    const std::string where = "node " + std::to_string(i);
    if (root_ok && i == g.root && m.kind != NodeKind::kSphere) add("root must be a sphere", where);
    if (root_ok && i != g.root && m.kind != NodeKind::kCylinder) {
      add("non-root node must be a cylinder", where);
    }
    if (!(m.radius > 0.0) || !std::isfinite(m.radius)) add("radius must be > 0", where);
    if (!(m.length >= 0.0) || !std::isfinite(m.length)) add("length must be >= 0", where);
    if (m.kind == NodeKind::kSphere && m.length != 0.0) add("sphere length must be 0", where);
    if (!(m.density > 0.0) || !std::isfinite(m.density)) add("density must be > 0", where);
    if (std::abs(Norm(m.attach_orientation) - 1.0) > 1e-9) {
      add("attach_orientation is not a unit quaternion", where);
    }
    for (double x : m.attach_offset) {
      if (!std::isfinite(x)) add("attach_offset not finite", where);
    }
    if (space.check_parameter_ranges && m.kind == NodeKind::kCylinder) {
      if (!in_range(m.radius, space.limb_radius_lo, space.limb_radius_hi)) {
        add("radius out of range", where);
      }
      if (!in_range(m.length, space.limb_length_lo, space.limb_length_hi)) {
        add("length out of range", where);
      }
    }
  }

  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    for (std::size_t j = 0; j < g.edges[i].joints.size(); ++j) {
      const JointSpec& js = g.edges[i].joints[j];
      const std::string where = "edge " + std::to_string(i) + " joint " + std::to_string(j);
      if (std::abs(Norm(js.axis) - 1.0) > 1e-9) add("joint axis is not a unit vector", where);
      if (!(js.range_lo < js.range_hi)) add("joint range_lo must be < range_hi", where);
      if (!(js.gear > 0.0)) add("gear must be > 0", where);
      if (!(js.armature > 0.0)) add("armature must be > 0", where);
      if (!(js.damping > 0.0)) add("damping must be > 0", where);
      if (space.check_parameter_ranges) {
        const double lo = RadToDeg(js.range_lo);
        const double hi = RadToDeg(js.range_hi);
        const bool known = std::any_of(
            space.joint_ranges.begin(), space.joint_ranges.end(), [&](const AngleRange& r) {
              return std::abs(r.lo_deg - lo) < 1e-9 && std::abs(r.hi_deg - hi) < 1e-9;
            });
        if (!known) add("joint range not in design vocabulary", where);
      }
    }
  }
  return report;
}

TokenOrder DfsTokenOrder(const MorphologyGraph& g, Rng* sibling_shuffle) {
  SpaceConfig structural;
  structural.check_parameter_ranges = false;
  structural.max_tokens = static_cast<int>(g.nodes.size());
  const ValidationReport report = ValidateGraph(g, structural);
  if (!report.ok()) throw MorphologyError("invalid graph: " + report.ToString());

  std::vector<std::vector<int>> children(g.nodes.size());
  for (const Edge& e : g.edges) children[e.parent].push_back(e.child);

  TokenOrder order;
  order.reserve(g.nodes.size());
  std::vector<int> stack = {g.root};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    std::vector<int> kids = children[v];
    if (sibling_shuffle != nullptr) {
      for (std::size_t i = kids.size(); i > 1; --i) {
        std::swap(kids[i - 1], kids[sibling_shuffle->UniformIndex(i)]);
      }
    }
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  return order;
}

MorphologyGraph Canonicalize(const MorphologyGraph& g) {
  const TokenOrder order = DfsTokenOrder(g);
  std::vector<int> new_index(g.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) new_index[order[i]] = static_cast<int>(i);

  MorphologyGraph out;
  out.name = g.name;
  out.root = 0;
  out.nodes.reserve(g.nodes.size());
  for (int v : order) out.nodes.push_back(g.nodes[v]);
  out.edges = g.edges;
  for (Edge& e : out.edges) {
    e.parent = new_index[e.parent];
    e.child = new_index[e.child];
  }
  std::stable_sort(out.edges.begin(), out.edges.end(),
                   [](const Edge& a, const Edge& b) { return a.child < b.child; });
  return out;
}

Quat PlanarQuat(double phi) {
  return {std::cos(0.5 * phi), 0.0, -std::sin(0.5 * phi), 0.0};
}

double PlanarAngle(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double dx = 1.0 - 2.0 * (y * y + z * z);
  const double dz = 2.0 * (x * z - w * y);
  if (std::hypot(dx, dz) < 1e-9) return -0.5 * std::numbers::pi;
  return std::atan2(dz, dx);
}

MorphologyGraph SampleMorphology(const SpaceConfig& space, Rng& rng) {
  const int lo = std::max(1, space.min_nodes);
  const int hi = std::max(lo, space.max_nodes);
  const int count = lo + static_cast<int>(rng.UniformIndex(static_cast<std::size_t>(hi - lo + 1)));

  MorphologyGraph g;
  g.name = "sampled";
  g.root = 0;
  ModuleNode torso;
  torso.kind = NodeKind::kSphere;
  torso.radius = rng.Uniform(space.torso_radius_lo, space.torso_radius_hi);
  torso.length = 0.0;
  torso.density = rng.Uniform(space.density_lo, space.density_hi);
  g.nodes.push_back(torso);

  std::vector<int> child_count = {0};
  for (int i = 1; i < count; ++i) {
    std::vector<int> open;
    for (int v = 0; v < static_cast<int>(g.nodes.size()); ++v) {
      const int cap = v == 0 ? space.max_children_root : space.max_children_limb;
      if (child_count[v] < cap) open.push_back(v);
    }
    if (open.empty()) break;
    const int parent = open[rng.UniformIndex(open.size())];

    ModuleNode limb;
    limb.kind = NodeKind::kCylinder;
    limb.radius = rng.Uniform(space.limb_radius_lo, space.limb_radius_hi);
    limb.length = rng.Uniform(space.limb_length_lo, space.limb_length_hi);
    limb.density = rng.Uniform(space.density_lo, space.density_hi);
    if (parent == 0) {
      // Radially outward from the lower half of the torso.
      const double a = DegToRad(rng.Uniform(-165.0, -15.0));
      limb.attach_orientation = PlanarQuat(a);
      limb.attach_offset = {torso.radius * std::cos(a), 0.0, torso.radius * std::sin(a)};
    } else {
      const double a = DegToRad(rng.Uniform(-75.0, 75.0));
      limb.attach_orientation = PlanarQuat(a);
      limb.attach_offset = {g.nodes[parent].length, 0.0, 0.0};
    }

    Edge edge;
    edge.parent = parent;
    edge.child = static_cast<int>(g.nodes.size());
    const int joints = rng.Bernoulli(space.two_joint_probability) ? 2 : 1;
    for (int j = 0; j < joints; ++j) {
      JointSpec js;
      if (j == 0) {
        js.axis = {0.0, 1.0, 0.0};
      } else {
        js.axis = rng.Bernoulli(0.5) ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 0.0, 1.0};
      }
      const AngleRange& r = space.joint_ranges[rng.UniformIndex(space.joint_ranges.size())];
      js.range_lo = DegToRad(r.lo_deg);
      js.range_hi = DegToRad(r.hi_deg);
      js.gear = rng.Uniform(space.gear_lo, space.gear_hi);
      js.armature = space.armature;
      js.damping = space.damping;
      edge.joints.push_back(js);
    }
    g.nodes.push_back(limb);
    g.edges.push_back(std::move(edge));
    child_count.push_back(0);
    ++child_count[parent];
  }
  return Canonicalize(g);
}

}  // namespace morphctl
