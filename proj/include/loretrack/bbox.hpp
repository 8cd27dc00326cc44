#pragma once

#include <algorithm>
#include <cmath>

namespace loretrack {

// Axis-aligned box, centre/size form, normalized to its coordinate frame.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  bool operator==(const BBox&) const = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

// Area from the same corner arithmetic as the intersection, so a box overlaps itself exactly.
inline double corner_area(const BBox& b) { return (b.x1() - b.x0()) * (b.y1() - b.y0()); }

// Intersection over union. Symmetric; exactly 1 for identical boxes.
inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = corner_area(a) + corner_area(b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Generalized IoU: IoU − (C − U)/C with C the enclosing box area.
inline double giou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = corner_area(a) + corner_area(b) - inter;
  const double cw = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double ch = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  const double c = cw * ch;
  if (uni <= 0 || c <= 0) return 0.0;
  return inter / uni - (c - uni) / c;
}

}  // namespace loretrack
