// SPDX-License-Identifier: Apache-2.0
//
// Zero-shot test variants: every module or joint of a robot gets a freshly
// drawn dynamics or kinematics parameter while the tree stays fixed.

#ifndef MORPHCTL_VARIATION_H_
#define MORPHCTL_VARIATION_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "morphctl/morphology.h"

namespace morphctl {

enum class VariationKind { kArmature, kDensity, kDamping, kGear, kLimbShape, kJointAngle };

std::string ToString(VariationKind kind);
VariationKind ParseVariationKind(const std::string& name);
const std::vector<VariationKind>& AllVariationKinds();

struct VariationRanges {
  double armature_lo = 0.1, armature_hi = 2.0;
  double damping_lo = 0.01, damping_hi = 5.0;
  double density_scale_lo = 0.8, density_scale_hi = 1.2;
  double gear_scale_lo = 0.8, gear_scale_hi = 1.2;
  double limb_radius_lo = 0.03, limb_radius_hi = 0.05;
  double limb_length_lo = 0.15, limb_length_hi = 0.45;
  std::vector<AngleRange> joint_ranges = DefaultJointAngleRanges();
  double min_overlap_fraction = 0.5;
};

struct VariationSpec {
  VariationKind kind = VariationKind::kArmature;
  int variants_per_robot = 4;
  VariationRanges ranges;
};

class VariationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

MorphologyGraph PerturbDynamics(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                                const VariationRanges& ranges = VariationRanges{});
MorphologyGraph PerturbKinematics(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                                  const VariationRanges& ranges = VariationRanges{});
// Dispatches to PerturbDynamics or PerturbKinematics.
MorphologyGraph Perturb(const MorphologyGraph& g, VariationKind kind, Rng& rng,
                        const VariationRanges& ranges = VariationRanges{});

// |[lo,hi] ∩ [a,b]| / (hi - lo), all in degrees.
double RangeOverlapFraction(const AngleRange& original, const AngleRange& candidate);
// Candidates from `ranges.joint_ranges` overlapping `original` by at least
// `ranges.min_overlap_fraction` of its width.
std::vector<AngleRange> AdmissibleJointRanges(const AngleRange& original,
                                              const VariationRanges& ranges);

struct NamedRobot {
  std::string id;
  MorphologyGraph graph;
};

struct VariantEntry {
  std::string source_id;
  VariationKind kind;
  int index = 0;
  std::uint64_t seed = 0;
  MorphologyGraph graph;
  std::string path;  // relative to the manifest directory once written
};

struct SuiteManifest {
  std::uint64_t master_seed = 0;
  std::vector<VariantEntry> entries;
};

// Each variant uses its own stream derived from (master seed, robot index,
// kind, variant index), so suites can be built in any order or in parallel.
SuiteManifest BuildVariantSuite(const std::vector<NamedRobot>& robots,
                                const std::vector<VariationSpec>& specs,
                                std::uint64_t master_seed);

// Writes one morphology file per entry plus manifest.json into `dir`.
void WriteVariantSuite(SuiteManifest& suite, const std::filesystem::path& dir);

struct ManifestRecord {
  std::string path;  // absolute or relative to the manifest directory
  std::string source_id;
  VariationKind kind;
  int index = 0;
  std::uint64_t seed = 0;
};
std::vector<ManifestRecord> ReadManifest(const std::filesystem::path& manifest_path);

}  // namespace morphctl

#endif  // MORPHCTL_VARIATION_H_
