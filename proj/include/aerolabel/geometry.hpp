#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "aerolabel/errors.hpp"

namespace aerolabel {

/// Axis-aligned box in pixel coordinates, corner form. Zero-area boxes are
/// permitted, negative extents are not. COCO's (x,y,w,h) convention is
/// converted at the format boundary only.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool operator==(const BoundingBox&) const = default;
};

inline bool is_valid_box(const BoundingBox& b) {
  return std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
         std::isfinite(b.x_max) && std::isfinite(b.y_max) &&
         b.x_min <= b.x_max && b.y_min <= b.y_max;
}

/// Overlap area of two boxes; 0 when disjoint or touching only at an edge.
inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw =
      std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih =
      std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double union_area(const BoundingBox& a, const BoundingBox& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

inline bool boxes_overlap(const BoundingBox& a, const BoundingBox& b) {
  return intersection_area(a, b) > 0.0;
}

/// True when the closed rectangles share any point (overlap, shared edge or
/// shared corner). Used for "touching" tests where zero-width contact counts.
inline bool boxes_touch(const BoundingBox& a, const BoundingBox& b) {
  return std::min(a.x_max, b.x_max) >= std::max(a.x_min, b.x_min) &&
         std::min(a.y_max, b.y_max) >= std::max(a.y_min, b.y_min);
}

/// Intersection over union. Both boxes having zero area is an error rather
/// than a silent 0 or 1; that case means something upstream produced a
/// degenerate label.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a.area() <= 0.0 && b.area() <= 0.0) {
    throw_validation("iou: both boxes have zero area");
  }
  return intersection_area(a, b) / union_area(a, b);
}

/// Generalized IoU: IoU - (C - U)/C with C the area of the smallest box
/// enclosing both inputs. Equals IoU when the enclosing box adds no empty
/// area; tends to -1 for far-apart boxes.
inline double giou(const BoundingBox& a, const BoundingBox& b) {
  if (a.area() <= 0.0 && b.area() <= 0.0) {
    throw_validation("giou: both boxes have zero area");
  }
  const double u = union_area(a, b);
  const BoundingBox hull{std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min),
                         std::max(a.x_max, b.x_max), std::max(a.y_max, b.y_max)};
  const double c = hull.area();
  const double iou_v = intersection_area(a, b) / u;
  if (c <= 0.0) return iou_v;  // collinear degenerate hull
  return iou_v - (c - u) / c;
}

/// Minimal box containing every input box.
inline BoundingBox union_box(std::span<const BoundingBox> boxes) {
  if (boxes.empty()) throw_validation("union_box: empty box list");
  BoundingBox out = boxes.front();
  for (const BoundingBox& b : boxes.subspan(1)) {
    out.x_min = std::min(out.x_min, b.x_min);
    out.y_min = std::min(out.y_min, b.y_min);
    out.x_max = std::max(out.x_max, b.x_max);
    out.y_max = std::max(out.y_max, b.y_max);
  }
  return out;
}

inline BoundingBox union_box(const std::vector<BoundingBox>& boxes) {
  return union_box(std::span<const BoundingBox>(boxes));
}

/// Scale a box about its center by `factor` in both dimensions, then clip to
/// `bounds`. factor = 1 is the identity.
inline BoundingBox expand(const BoundingBox& box, double factor,
                          const BoundingBox& bounds) {
  if (!(factor >= 1.0)) {
    throw_validation("expand: factor must be >= 1");
  }
  BoundingBox out = box;
  if (factor != 1.0) {  // keep factor 1 bit-exact
    const double hw = 0.5 * box.width() * factor;
    const double hh = 0.5 * box.height() * factor;
    const double cx = box.center_x();
    const double cy = box.center_y();
    out = {cx - hw, cy - hh, cx + hw, cy + hh};
  }
  out.x_min = std::max(out.x_min, bounds.x_min);
  out.y_min = std::max(out.y_min, bounds.y_min);
  out.x_max = std::min(out.x_max, bounds.x_max);
  out.y_max = std::max(std::min(out.y_max, bounds.y_max), out.y_min);
  out.x_max = std::max(out.x_max, out.x_min);
  return out;
}

}  // namespace aerolabel
