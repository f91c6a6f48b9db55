#pragma once

// Pixel-rasterization oracle for box overlap metrics, for INTEGER boxes only:
// a box covers the unit cells [x, x+1) x [y, y+1) inside it, so areas and
// overlaps are exact cell counts. Deliberately brute force and independent of
// the library's interval arithmetic.

#include <algorithm>
#include <cstdint>

#include "aerolabel/geometry.hpp"

namespace testutil {

inline std::int64_t cells_in(const aerolabel::BoundingBox& b, int x, int y) {
  return x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max ? 1 : 0;
}

struct RasterizedOverlap {
  std::int64_t area_a = 0;
  std::int64_t area_b = 0;
  std::int64_t intersection = 0;
  std::int64_t hull = 0;

  std::int64_t union_cells() const { return area_a + area_b - intersection; }
};

inline RasterizedOverlap rasterize_pair(const aerolabel::BoundingBox& a,
                                        const aerolabel::BoundingBox& b) {
  RasterizedOverlap out;
  const int x0 = static_cast<int>(std::min(a.x_min, b.x_min));
  const int y0 = static_cast<int>(std::min(a.y_min, b.y_min));
  const int x1 = static_cast<int>(std::max(a.x_max, b.x_max));
  const int y1 = static_cast<int>(std::max(a.y_max, b.y_max));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::int64_t in_a = cells_in(a, x, y);
      const std::int64_t in_b = cells_in(b, x, y);
      out.area_a += in_a;
      out.area_b += in_b;
      out.intersection += in_a & in_b;
      ++out.hull;
    }
  }
  return out;
}

inline double oracle_iou(const aerolabel::BoundingBox& a,
                         const aerolabel::BoundingBox& b) {
  const RasterizedOverlap r = rasterize_pair(a, b);
  return static_cast<double>(r.intersection) / static_cast<double>(r.union_cells());
}

inline double oracle_giou(const aerolabel::BoundingBox& a,
                          const aerolabel::BoundingBox& b) {
  const RasterizedOverlap r = rasterize_pair(a, b);
  const double iou =
      static_cast<double>(r.intersection) / static_cast<double>(r.union_cells());
  if (r.hull == 0) return iou;
  return iou - static_cast<double>(r.hull - r.union_cells()) /
                   static_cast<double>(r.hull);
}

}  // namespace testutil
