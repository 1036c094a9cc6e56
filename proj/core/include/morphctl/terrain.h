// SPDX-License-Identifier: Apache-2.0

#ifndef MORPHCTL_TERRAIN_H_
#define MORPHCTL_TERRAIN_H_

#include <string>
#include <vector>

#include "morphctl/rng.h"

namespace morphctl {

enum class Task { kFlat, kVariable, kObstacles, kEscape, kObstaclesCylinders };

std::string ToString(Task task);
Task ParseTask(const std::string& name);

enum class SegmentKind { kFlat, kHills, kSteps, kRubble, kBowl, kObstacle };
std::string ToString(SegmentKind kind);

struct TerrainSegment {
  SegmentKind kind;
  double x_begin;
  double x_end;
};

// Piecewise-linear ground profile h(x) on a uniform grid.
class Heightfield {
 public:
  static constexpr double kXMin = -5.0;
  static constexpr double kXMax = 105.0;
  static constexpr double kSpacing = 0.05;

  Heightfield();

  // Linear interpolation; clamps to the boundary value outside the domain.
  double Height(double x) const;
  // Slope dh/dx of the segment containing x (0 outside the domain).
  double Slope(double x) const;
  // Arc length of the profile from kXMin to x.
  double ArcLength(double x) const;

  int num_samples() const { return static_cast<int>(h_.size()); }
  double sample_x(int i) const { return kXMin + kSpacing * i; }
  const std::vector<double>& samples() const { return h_; }
  std::vector<double>& mutable_samples() { return h_; }

  const std::vector<TerrainSegment>& segments() const { return segments_; }
  std::vector<TerrainSegment>& mutable_segments() { return segments_; }
  // Annotation of the segment containing x (kFlat when none matches).
  SegmentKind KindAt(double x) const;

  // Recomputes the cumulative arc length after editing samples.
  void Finalize();

  double spawn_x() const { return spawn_x_; }
  void set_spawn_x(double x) { spawn_x_ = x; }

 private:
  std::vector<double> h_;
  std::vector<double> arc_;
  std::vector<TerrainSegment> segments_;
  double spawn_x_ = 0.0;
};

double QueryHeight(const Heightfield& field, double x);

Heightfield GenerateTerrain(Task task, Rng& rng);

}  // namespace morphctl

#endif  // MORPHCTL_TERRAIN_H_
