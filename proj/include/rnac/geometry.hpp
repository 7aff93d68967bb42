#pragma once

#include <algorithm>
#include <cmath>

#include "rnac/error.hpp"

namespace rnac {

// Axis-aligned rectangle in world units, stored as center + extent.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double bottom() const { return cy - 0.5 * h; }
  double top() const { return cy + 0.5 * h; }

  bool operator==(const Box&) const = default;
};

// Scene is the rectangle [0, width] x [0, height].
struct SceneBounds {
  double width = 1.0;
  double height = 1.0;

  Box as_box() const { return Box{0.5 * width, 0.5 * height, width, height}; }

  bool operator==(const SceneBounds&) const = default;
};

// Box expressed in the agent's coordinates: center in [-1,1], size in [0,1].
struct NormalizedBox {
  double nx = 0.0;
  double ny = 0.0;
  double nw = 0.0;
  double nh = 0.0;

  bool operator==(const NormalizedBox&) const = default;
};

inline bool box_finite(const Box& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
         std::isfinite(b.h);
}

inline void check_box(const Box& b) {
  if (!box_finite(b)) throw GeometryError("box has non-finite fields");
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw GeometryError("box extent must be positive");
}

inline void check_scene(const SceneBounds& s) {
  if (!std::isfinite(s.width) || !std::isfinite(s.height) ||
      !(s.width > 0.0) || !(s.height > 0.0))
    throw GeometryError("scene bounds must be finite and positive");
}

// Centers map to [-1,1], sizes to [0,1]; components are clamped so boxes
// partially outside the scene still encode validly.
inline NormalizedBox normalize_box(const Box& b, const SceneBounds& s) {
  check_box(b);
  check_scene(s);
  NormalizedBox n;
  n.nx = std::clamp(2.0 * b.cx / s.width - 1.0, -1.0, 1.0);
  n.ny = std::clamp(2.0 * b.cy / s.height - 1.0, -1.0, 1.0);
  n.nw = std::clamp(b.w / s.width, 0.0, 1.0);
  n.nh = std::clamp(b.h / s.height, 0.0, 1.0);
  return n;
}

// Closed inequalities: boundary contact counts as contained.
inline bool contains(const Box& outer, const Box& inner) {
  return inner.left() >= outer.left() && inner.right() <= outer.right() &&
         inner.bottom() >= outer.bottom() && inner.top() <= outer.top();
}

// Moves the center so the box lies fully inside the scene; extent unchanged.
// The clamped edges are nudged by ulps where rounding of (limit - half)
// would leave them infinitesimally outside, so containment in the scene box
// holds exactly afterwards.
inline Box clamp_center_to_scene(const Box& b, const SceneBounds& s) {
  check_box(b);
  check_scene(s);
  if (b.w > s.width || b.h > s.height)
    throw GeometryError("box larger than scene");
  auto fit = [](double c, double half, double limit) {
    c = std::clamp(c, half, limit - half);
    for (int i = 0; i < 4 && c + half > limit; ++i)
      c = std::nextafter(c, -HUGE_VAL);
    for (int i = 0; i < 4 && c - half < 0.0; ++i)
      c = std::nextafter(c, HUGE_VAL);
    return c;
  };
  Box out = b;
  out.cx = fit(b.cx, 0.5 * b.w, s.width);
  out.cy = fit(b.cy, 0.5 * b.h, s.height);
  return out;
}

}  // namespace rnac
