// SPDX-License-Identifier: Apache-2.0

#include "morphctl/variation.h"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "morphctl/morphology_io.h"

namespace morphctl {

std::string ToString(VariationKind kind) {
  switch (kind) {
    case VariationKind::kArmature: return "armature";
    case VariationKind::kDensity: return "density";
    case VariationKind::kDamping: return "damping";
    case VariationKind::kGear: return "gear";
    case VariationKind::kLimbShape: return "limb_shape";
    case VariationKind::kJointAngle: return "joint_angle";
  }
  return "unknown";
}

VariationKind ParseVariationKind(const std::string& name) {
  for (VariationKind k : AllVariationKinds()) {
    if (ToString(k) == name) return k;
  }
  throw VariationError("unknown variation kind '" + name + "'");
}

const std::vector<VariationKind>& AllVariationKinds() {
  static const std::vector<VariationKind> kKinds = {
      VariationKind::kArmature, VariationKind::kDensity,   VariationKind::kDamping,
      VariationKind::kGear,     VariationKind::kLimbShape, VariationKind::kJointAngle};
  return kKinds;
}

MorphologyGraph PerturbDynamics(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                                const VariationRanges& ranges) {
  MorphologyGraph out = g;
  switch (kind) {
    case VariationKind::kArmature:
      for (Edge& e : out.edges)
        for (JointSpec& j : e.joints) j.armature = rng.Uniform(ranges.armature_lo, ranges.armature_hi);
      break;
    case VariationKind::kDamping:
      for (Edge& e : out.edges)
        for (JointSpec& j : e.joints) j.damping = rng.Uniform(ranges.damping_lo, ranges.damping_hi);
      break;
    case VariationKind::kGear:
      for (Edge& e : out.edges)
        for (JointSpec& j : e.joints) j.gear *= rng.Uniform(ranges.gear_scale_lo, ranges.gear_scale_hi);
      break;
    case VariationKind::kDensity:
      for (ModuleNode& m : out.nodes)
        m.density *= rng.Uniform(ranges.density_scale_lo, ranges.density_scale_hi);
      break;
    default:
      throw VariationError("not a dynamics variation: " + ToString(kind));
  }
  return out;
}

double RangeOverlapFraction(const AngleRange& original, const AngleRange& candidate) {
  const double width = original.hi_deg - original.lo_deg;
  if (width <= 0.0) return 0.0;
  const double inter = std::min(original.hi_deg, candidate.hi_deg) -
                       std::max(original.lo_deg, candidate.lo_deg);
  return std::max(0.0, inter) / width;
}

std::vector<AngleRange> AdmissibleJointRanges(const AngleRange& original,
                                              const VariationRanges& ranges) {
  std::vector<AngleRange> out;
  for (const AngleRange& c : ranges.joint_ranges) {
    if (RangeOverlapFraction(original, c) >= ranges.min_overlap_fraction - 1e-9) out.push_back(c);
  }
  return out;
}

MorphologyGraph PerturbKinematics(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                                  const VariationRanges& ranges) {
  MorphologyGraph out = g;
  if (kind == VariationKind::kLimbShape) {
    std::vector<double> scale(out.nodes.size(), 1.0);
    for (std::size_t i = 0; i < out.nodes.size(); ++i) {
      ModuleNode& m = out.nodes[i];
      if (m.kind != NodeKind::kCylinder) continue;
      m.radius = rng.Uniform(ranges.limb_radius_lo, ranges.limb_radius_hi);
      const double length = rng.Uniform(ranges.limb_length_lo, ranges.limb_length_hi);
      scale[i] = m.length > 0.0 ? length / m.length : 1.0;
      m.length = length;
    }
    // Children stay attached at the same fraction along a resized limb.
    for (const Edge& e : out.edges) {
      if (out.nodes[e.parent].kind != NodeKind::kCylinder) continue;
      for (double& x : out.nodes[e.child].attach_offset) x *= scale[e.parent];
    }
    return out;
  }
  if (kind == VariationKind::kJointAngle) {
    for (std::size_t ei = 0; ei < out.edges.size(); ++ei) {
      for (std::size_t ji = 0; ji < out.edges[ei].joints.size(); ++ji) {
        JointSpec& j = out.edges[ei].joints[ji];
        const AngleRange original{RadToDeg(j.range_lo), RadToDeg(j.range_hi)};
        const std::vector<AngleRange> options = AdmissibleJointRanges(original, ranges);
        if (options.empty()) {
          throw VariationError("no admissible joint range for edge " + std::to_string(ei) +
                               " joint " + std::to_string(ji));
        }
        const AngleRange& pick = options[rng.UniformIndex(options.size())];
        j.range_lo = DegToRad(pick.lo_deg);
        j.range_hi = DegToRad(pick.hi_deg);
      }
    }
    return out;
  }
  throw VariationError("not a kinematics variation: " + ToString(kind));
}

MorphologyGraph Perturb(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                        const VariationRanges& ranges) {
  if (kind == VariationKind::kLimbShape || kind == VariationKind::kJointAngle) {
    return PerturbKinematics(g, kind, rng, ranges);
  }
  return PerturbDynamics(g, kind, rng, ranges);
}

SuiteManifest BuildVariantSuite(const std::vector<NamedRobot>& robots,
                                const std::vector<VariationSpec>& specs,
                                std::uint64_t master_seed) {
  SuiteManifest suite;
  suite.master_seed = master_seed;
  for (const VariationSpec& spec : specs) {
    if (spec.variants_per_robot < 1) throw VariationError("variants_per_robot must be >= 1");
  }
  for (std::size_t r = 0; r < robots.size(); ++r) {
    for (const VariationSpec& spec : specs) {
      for (int v = 0; v < spec.variants_per_robot; ++v) {
        VariantEntry entry;
        entry.source_id = robots[r].id;
        entry.kind = spec.kind;
        entry.index = v;
        entry.seed = DeriveSeed(master_seed, {r, static_cast<std::uint64_t>(spec.kind),
                                              static_cast<std::uint64_t>(v)});
        Rng rng(entry.seed);
        entry.graph = Perturb(robots[r].graph, spec.kind, rng, spec.ranges);
        entry.graph.name = robots[r].id + "_" + ToString(spec.kind) + "_" + std::to_string(v);
        suite.entries.push_back(std::move(entry));
      }
    }
  }
  return suite;
}

void WriteVariantSuite(SuiteManifest& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["master_seed"] = suite.master_seed;
  manifest["variants"] = nlohmann::ordered_json::array();
  for (VariantEntry& e : suite.entries) {
    e.path = e.graph.name + ".json";
    SpaceConfig space;
    space.max_tokens = static_cast<int>(std::max<std::size_t>(e.graph.nodes.size(), 1));
    SaveMorphologyFile(dir / e.path, e.graph, space);
    nlohmann::ordered_json rec;
    rec["path"] = e.path;
    rec["source"] = e.source_id;
    rec["kind"] = ToString(e.kind);
    rec["index"] = e.index;
    rec["seed"] = e.seed;
    manifest["variants"].push_back(rec);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw VariationError((dir / "manifest.json").string() + ": cannot open for writing");
  out << manifest.dump(2) << "\n";
}

std::vector<ManifestRecord> ReadManifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw VariationError(manifest_path.string() + ": cannot open");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw VariationError(manifest_path.string() + ": " + e.what());
  }
  std::vector<ManifestRecord> out;
  const auto base = manifest_path.parent_path();
  for (const auto& v : doc.at("variants")) {
    ManifestRecord r;
    std::filesystem::path p = v.at("path").get<std::string>();
    r.path = (p.is_absolute() ? p : base / p).string();
    r.source_id = v.at("source").get<std::string>();
    r.kind = ParseVariationKind(v.at("kind").get<std::string>());
    r.index = v.at("index").get<int>();
    r.seed = v.at("seed").get<std::uint64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace morphctl
