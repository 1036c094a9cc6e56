// SPDX-License-Identifier: Apache-2.0

#include "morphctl/terrain.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace morphctl {

std::string ToString(Task task) {
  switch (task) {
    case Task::kFlat: return "flat";
    case Task::kVariable: return "variable";
    case Task::kObstacles: return "obstacles";
    case Task::kEscape: return "escape";
    case Task::kObstaclesCylinders: return "obstacles_cylinders";
  }
  return "unknown";
}

Task ParseTask(const std::string& name) {
  for (Task t : {Task::kFlat, Task::kVariable, Task::kObstacles, Task::kEscape,
                 Task::kObstaclesCylinders}) {
    if (ToString(t) == name) return t;
  }
  throw std::invalid_argument("unknown task '" + name + "'");
}

std::string ToString(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kFlat: return "flat";
    case SegmentKind::kHills: return "hills";
    case SegmentKind::kSteps: return "steps";
    case SegmentKind::kRubble: return "rubble";
    case SegmentKind::kBowl: return "bowl";
    case SegmentKind::kObstacle: return "obstacle";
  }
  return "unknown";
}

Heightfield::Heightfield() {
  const int n = static_cast<int>(std::lround((kXMax - kXMin) / kSpacing)) + 1;
  h_.assign(n, 0.0);
  Finalize();
}

double Heightfield::Height(double x) const {
  if (x <= kXMin) return h_.front();
  const double u = (x - kXMin) / kSpacing;
  const int i = static_cast<int>(u);
  if (i >= num_samples() - 1) return h_.back();
  const double t = u - i;
  return h_[i] + t * (h_[i + 1] - h_[i]);
}

double Heightfield::Slope(double x) const {
  if (x <= kXMin || x >= kXMax) return 0.0;
  const int i = std::min(static_cast<int>((x - kXMin) / kSpacing), num_samples() - 2);
  return (h_[i + 1] - h_[i]) / kSpacing;
}

double Heightfield::ArcLength(double x) const {
  if (x <= kXMin) return x - kXMin;
  const double u = (x - kXMin) / kSpacing;
  const int i = static_cast<int>(u);
  if (i >= num_samples() - 1) return arc_.back() + (x - kXMax);
  const double t = u - i;
  return arc_[i] + t * (arc_[i + 1] - arc_[i]);
}

SegmentKind Heightfield::KindAt(double x) const {
  for (const TerrainSegment& s : segments_) {
    if (x >= s.x_begin && x < s.x_end) return s.kind;
  }
  return SegmentKind::kFlat;
}

void Heightfield::Finalize() {
  arc_.assign(h_.size(), 0.0);
  for (std::size_t i = 1; i < h_.size(); ++i) {
    arc_[i] = arc_[i - 1] + std::hypot(kSpacing, h_[i] - h_[i - 1]);
  }
}

double QueryHeight(const Heightfield& field, double x) { return field.Height(x); }

namespace {

int IndexAt(double x) {
  return static_cast<int>(std::lround((x - Heightfield::kXMin) / Heightfield::kSpacing));
}

// Applies f(x) to every sample with x in [a, b).
template <typename F>
void Fill(Heightfield& field, double a, double b, F f) {
  auto& h = field.mutable_samples();
  const int i0 = std::max(0, IndexAt(a));
  const int i1 = std::min(field.num_samples() - 1, IndexAt(b));
  for (int i = i0; i < i1; ++i) h[i] = f(field.sample_x(i));
}

void AddHills(Heightfield& field, double a, double b, Rng& rng) {
  const double len = b - a;
  const int humps = std::max(1, static_cast<int>(std::lround(len / rng.Uniform(1.0, 3.0))));
  const double wavelength = len / humps;
  const double amplitude = rng.Uniform(0.1, 0.3);
  Fill(field, a, b, [&](double x) {
    const double s = std::sin(std::numbers::pi * (x - a) / wavelength);
    return amplitude * s * s;
  });
}

void AddSteps(Heightfield& field, double a, double b, Rng& rng) {
  const double rise = rng.Uniform(0.05, 0.15);
  const double tread = rng.Uniform(0.5, 1.0);
  const double mid = 0.5 * (a + b);
  Fill(field, a, b, [&](double x) {
    const double d = x < mid ? x - a : b - x;
    return rise * std::floor(d / tread);
  });
}

void AddRubble(Heightfield& field, double a, double b, Rng& rng) {
  double x = a;
  while (x < b) {
    const double w = rng.Uniform(0.2, 0.5);
    const double height = rng.Uniform(0.0, 0.1);
    Fill(field, x, std::min(x + w, b), [&](double) { return height; });
    x += w;
  }
}

Heightfield Variable(Rng& rng) {
  Heightfield field;
  auto& segs = field.mutable_segments();
  double x = Heightfield::kXMin;
  double end = rng.Uniform(2.0, 4.0);
  segs.push_back({SegmentKind::kFlat, x, end});
  x = end;
  while (x < Heightfield::kXMax) {
    const SegmentKind kinds[] = {SegmentKind::kHills, SegmentKind::kSteps, SegmentKind::kRubble};
    const SegmentKind kind = kinds[rng.UniformIndex(3)];
    end = std::min(Heightfield::kXMax, x + rng.Uniform(4.0, 8.0));
    switch (kind) {
      case SegmentKind::kHills: AddHills(field, x, end, rng); break;
      case SegmentKind::kSteps: AddSteps(field, x, end, rng); break;
      default: AddRubble(field, x, end, rng); break;
    }
    segs.push_back({kind, x, end});
    x = end;
    if (x >= Heightfield::kXMax) break;
    end = std::min(Heightfield::kXMax, x + rng.Uniform(2.0, 4.0));
    segs.push_back({SegmentKind::kFlat, x, end});
    x = end;
  }
  return field;
}

template <typename Shape>
Heightfield Obstacles(Rng& rng, Shape shape) {
  Heightfield field;
  auto& segs = field.mutable_segments();
  double x = 2.0;
  segs.push_back({SegmentKind::kFlat, Heightfield::kXMin, x});
  while (x < Heightfield::kXMax) {
    x += rng.Uniform(2.0, 5.0);
    const double width = shape(field, x, rng);
    if (x >= Heightfield::kXMax) break;
    segs.push_back({SegmentKind::kObstacle, x, std::min(x + width, Heightfield::kXMax)});
    x += width;
  }
  return field;
}

Heightfield Escape(Rng& rng) {
  constexpr double kCenter = 10.0;
  constexpr double kRadius = 5.0;
  constexpr double kDepth = 1.0;
  Heightfield field;
  auto& segs = field.mutable_segments();
  Fill(field, kCenter - kRadius, kCenter + kRadius, [&](double x) {
    const double u = (x - kCenter) / kRadius;
    return kDepth * (u * u - 1.0);
  });
  segs.push_back({SegmentKind::kBowl, kCenter - kRadius, kCenter + kRadius});
  // Ring of small hills on both rims.
  for (double side : {-1.0, 1.0}) {
    double inner = kCenter + side * kRadius;
    double d = 0.0;
    while (d < 10.0) {
      const double w = rng.Uniform(0.6, 1.5);
      const double amp = rng.Uniform(0.05, 0.2);
      const double a = side > 0 ? inner + d : inner - d - w;
      const double b = a + w;
      Fill(field, std::max(a, Heightfield::kXMin), b, [&](double x) {
        const double s = std::sin(std::numbers::pi * (x - a) / w);
        return amp * s * s;
      });
      segs.push_back({SegmentKind::kHills, std::max(a, Heightfield::kXMin), b});
      d += w + rng.Uniform(0.2, 0.8);
    }
  }
  std::sort(segs.begin(), segs.end(),
            [](const TerrainSegment& a, const TerrainSegment& b) { return a.x_begin < b.x_begin; });
  field.set_spawn_x(kCenter);
  return field;
}

}  // namespace

Heightfield GenerateTerrain(Task task, Rng& rng) {
  Heightfield field;
  switch (task) {
    case Task::kFlat:
      field.mutable_segments().push_back(
          {SegmentKind::kFlat, Heightfield::kXMin, Heightfield::kXMax});
      break;
    case Task::kVariable:
      field = Variable(rng);
      break;
    case Task::kObstacles:
      field = Obstacles(rng, [](Heightfield& f, double x, Rng& r) {
        const double width = r.Uniform(0.4, 1.2);
        const double height = r.Uniform(0.1, 0.4);
        Fill(f, x, x + width, [&](double) { return height; });
        return width;
      });
      break;
    case Task::kObstaclesCylinders:
      field = Obstacles(rng, [](Heightfield& f, double x, Rng& r) {
        const double radius = r.Uniform(0.15, 0.5);
        const double c = x + radius;
        Fill(f, x, x + 2.0 * radius, [&](double xs) {
          const double d = xs - c;
          return std::sqrt(std::max(0.0, radius * radius - d * d));
        });
        return 2.0 * radius;
      });
      break;
    case Task::kEscape:
      field = Escape(rng);
      break;
  }
  field.Finalize();
  return field;
}

}  // namespace morphctl
