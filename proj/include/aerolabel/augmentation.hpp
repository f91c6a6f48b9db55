#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"
#include "aerolabel/imaging.hpp"
#include "aerolabel/parallel.hpp"
#include "aerolabel/rng.hpp"

namespace aerolabel {

/// A masked object cutout with the class it represents and its real-world
/// maximum width, the attribute the scaler works from.
struct PasteObject {
  MaskedCrop crop;
  int class_id = 0;
  double max_width_m = 0.0;
};

/// A false-positive crop grouped by the class the detector wrongly assigned.
struct FpCrop {
  Raster raster;
  int predicted_class = 0;
  std::int64_t source_image_id = 0;
};

enum class MosaicVariant { square, double_width, double_height };

struct MosaicSpec {
  MosaicVariant variant = MosaicVariant::square;
  int target_side = 900;
  int grid_k = 3;  // square variant packs k*k cells; 2:1 variants pack 2*k*k
  std::uint64_t seed = 0;
};

struct PasteConfig {
  int min_objects_per_image = 1;
  int max_objects_per_image = 5;
  std::map<int, double> class_mix;  // class id -> weight
  int margin_px = 0;
  double blend_strength = 0.5;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Metric scaling
// ---------------------------------------------------------------------------

/// Ground sampling distance in meters per pixel:
/// (altitude * sensor_width) / (focal_length * image_width).
inline double compute_gsd(const FlightMeta& meta, int image_width_px) {
  if (!meta.valid() || image_width_px <= 0) {
    throw_validation("compute_gsd: flight metadata and image width must be positive");
  }
  return (meta.altitude_m * meta.sensor_width_mm) /
         (meta.focal_length_mm * static_cast<double>(image_width_px));
}

/// Resize an object so its opaque width covers round(max_width_m / gsd)
/// pixels, aspect preserved. Objects that would land under 2 px wide are an
/// error: at that altitude the object cannot be represented.
inline MaskedCrop scale_object(const PasteObject& obj, double gsd) {
  if (!(gsd > 0.0) || !std::isfinite(gsd)) {
    throw_validation("scale_object: gsd must be positive");
  }
  if (!(obj.max_width_m > 0.0)) {
    throw_validation("scale_object: max_width_m must be positive");
  }
  const long target_w = std::lround(obj.max_width_m / gsd);
  if (target_w < 2) {
    throw_validation("scale_object: object smaller than 2 px at this altitude");
  }
  const Raster tight = crop(obj.crop.raster, obj.crop.tight_box);
  const long target_h = std::max(
      1L, std::lround(static_cast<double>(tight.height) * target_w / tight.width));
  Raster resized = resize(tight, static_cast<int>(target_w), static_cast<int>(target_h));
  return make_masked_crop(std::move(resized));
}

// ---------------------------------------------------------------------------
// Mosaic construction
// ---------------------------------------------------------------------------

struct MosaicImage {
  Raster raster;
  int source_class = 0;  // the class whose false positives fill the tiles
};

namespace detail {

struct MosaicGrid {
  int rows = 0, cols = 0, cell_w = 0, cell_h = 0;
};

inline MosaicGrid mosaic_grid(const MosaicSpec& spec) {
  if (spec.target_side <= 0) throw_validation("mosaic: target_side must be > 0");
  if (spec.grid_k < 1) throw_validation("mosaic: grid_k must be >= 1");
  MosaicGrid g;
  switch (spec.variant) {
    case MosaicVariant::square:
      g.cell_w = g.cell_h = std::max(1, spec.target_side / spec.grid_k);
      g.rows = g.cols = spec.grid_k;
      break;
    case MosaicVariant::double_width:
      g.cell_h = std::max(1, spec.target_side / (2 * spec.grid_k));
      g.cell_w = 2 * g.cell_h;
      g.cols = spec.grid_k;
      g.rows = 2 * spec.grid_k;
      break;
    case MosaicVariant::double_height:
      g.cell_w = std::max(1, spec.target_side / (2 * spec.grid_k));
      g.cell_h = 2 * g.cell_w;
      g.cols = 2 * spec.grid_k;
      g.rows = spec.grid_k;
      break;
  }
  return g;
}

}  // namespace detail

inline int mosaic_cells_per_image(const MosaicSpec& spec) {
  const auto g = detail::mosaic_grid(spec);
  return g.rows * g.cols;
}

/// Iterations per class: enough mosaics to cycle the whole pool once, plus
/// nine extra.
inline int mosaic_iterations(std::size_t n_fps, int cells_per_mosaic) {
  return static_cast<int>((n_fps + cells_per_mosaic - 1) / cells_per_mosaic) + 9;
}

/// Tile each class's false-positive crops into mosaic images. Per mosaic the
/// pool is reshuffled and cells are filled row-major, cycling when the pool
/// is smaller than the grid. Crops keep their native resolution until the
/// single resize into their cell.
inline std::vector<MosaicImage> build_mosaics(
    const std::map<int, std::vector<FpCrop>>& fps_by_class,
    const MosaicSpec& spec, int workers = 1) {
  const auto grid = detail::mosaic_grid(spec);
  const int cells = grid.rows * grid.cols;
  std::vector<std::pair<int, const std::vector<FpCrop>*>> classes;
  for (const auto& [class_id, fps] : fps_by_class) {
    if (fps.empty()) {
      throw_validation("build_mosaics: class " + std::to_string(class_id) +
                       " has no false-positive crops");
    }
    classes.emplace_back(class_id, &fps);
  }

  // Classes shuffle from independent (seed, class id) streams, so per-class
  // work can fan out to workers without changing the result.
  auto per_class = parallel_map(classes.size(), workers, [&](std::size_t ci) {
    const auto [class_id, fps_ptr] = classes[ci];
    const std::vector<FpCrop>& fps = *fps_ptr;
    auto rng = make_rng(spec.seed, static_cast<std::uint64_t>(class_id));
    const int iterations = mosaic_iterations(fps.size(), cells);
    std::vector<std::size_t> pool(fps.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<MosaicImage> out;
    out.reserve(iterations);
    for (int it = 0; it < iterations; ++it) {
      shuffle(pool, rng);
      MosaicImage mosaic;
      mosaic.source_class = class_id;
      mosaic.raster = Raster::filled(grid.cols * grid.cell_w,
                                     grid.rows * grid.cell_h, 3, 0);
      int cell = 0;
      for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c, ++cell) {
          const Raster& src = fps[pool[cell % pool.size()]].raster;
          const Raster tile = resize(src, grid.cell_w, grid.cell_h);
          for (int y = 0; y < grid.cell_h; ++y) {
            const std::uint8_t* s = tile.pixel(0, y);
            std::uint8_t* d = mosaic.raster.pixel(c * grid.cell_w, r * grid.cell_h + y);
            std::copy(s, s + static_cast<std::size_t>(grid.cell_w) * 3, d);
          }
        }
      }
      out.push_back(std::move(mosaic));
    }
    return out;
  });

  std::vector<MosaicImage> out;
  for (auto& group : per_class) {
    for (auto& mosaic : group) out.push_back(std::move(mosaic));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Blending
// ---------------------------------------------------------------------------

namespace detail {

/// Chebyshev distance (in pixels) from each opaque pixel to the nearest
/// non-opaque one, capped at `limit`. Border pixels count the outside as
/// non-opaque.
inline std::vector<int> opaque_edge_distance(const Raster& crop, int limit) {
  const int w = crop.width, h = crop.height;
  std::vector<int> dist(static_cast<std::size_t>(w) * h, -1);
  std::deque<std::pair<int, int>> queue;
  auto at = [&](int x, int y) -> int& {
    return dist[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (crop.alpha(x, y) == 0) continue;
      const bool on_border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
      bool next_to_hole = on_border;
      for (int dy = -1; dy <= 1 && !next_to_hole; ++dy) {
        for (int dx = -1; dx <= 1 && !next_to_hole; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < w && ny < h && crop.alpha(nx, ny) == 0) {
            next_to_hole = true;
          }
        }
      }
      if (next_to_hole) {
        at(x, y) = 1;
        queue.emplace_back(x, y);
      }
    }
  }
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    if (at(x, y) >= limit) continue;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        if (crop.alpha(nx, ny) == 0 || at(nx, ny) >= 0) continue;
        at(nx, ny) = at(x, y) + 1;
        queue.emplace_back(nx, ny);
      }
    }
  }
  for (int& d : dist) {
    if (d < 0) d = limit;  // interior pixels past the cap
  }
  return dist;
}

struct ChannelStats {
  double mean[3] = {0, 0, 0};
  double stddev[3] = {0, 0, 0};
  std::int64_t count = 0;
};

}  // namespace detail

/// Shift the object's per-channel mean and spread toward the statistics of
/// the background ring around the paste site (ring width 25% of the crop
/// size), feather the mask edge over 2 px, and composite. strength 0 is a
/// plain composite. The feather scales alpha but never zeroes an opaque
/// pixel, so the pasted opaque extent stays exact.
inline Raster blend(const Raster& base, const MaskedCrop& crop, int x, int y,
                    double strength) {
  if (strength < 0.0 || strength > 1.0) {
    throw_validation("blend: strength must be in [0,1]");
  }
  if (x < 0 || y < 0 || x + crop.raster.width > base.width ||
      y + crop.raster.height > base.height) {
    throw_validation("blend: placement exceeds base bounds");
  }
  if (strength == 0.0) return composite(base, crop, x, y);

  const int cw = crop.raster.width, ch = crop.raster.height;
  const int ring = std::max(1, static_cast<int>(std::lround(0.25 * std::max(cw, ch))));

  detail::ChannelStats bg;
  {
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    const int x0 = std::max(0, x - ring), x1 = std::min(base.width, x + cw + ring);
    const int y0 = std::max(0, y - ring), y1 = std::min(base.height, y + ch + ring);
    for (int by = y0; by < y1; ++by) {
      for (int bx = x0; bx < x1; ++bx) {
        if (bx >= x && bx < x + cw && by >= y && by < y + ch) continue;
        const std::uint8_t* p = base.pixel(bx, by);
        for (int c = 0; c < 3; ++c) {
          sum[c] += p[c];
          sq[c] += static_cast<double>(p[c]) * p[c];
        }
        ++bg.count;
      }
    }
    for (int c = 0; c < 3 && bg.count > 0; ++c) {
      bg.mean[c] = sum[c] / bg.count;
      bg.stddev[c] = std::sqrt(std::max(0.0, sq[c] / bg.count - bg.mean[c] * bg.mean[c]));
    }
  }

  detail::ChannelStats obj;
  {
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    for (int cy = 0; cy < ch; ++cy) {
      for (int cx = 0; cx < cw; ++cx) {
        if (crop.raster.alpha(cx, cy) == 0) continue;
        const std::uint8_t* p = crop.raster.pixel(cx, cy);
        for (int c = 0; c < 3; ++c) {
          sum[c] += p[c];
          sq[c] += static_cast<double>(p[c]) * p[c];
        }
        ++obj.count;
      }
    }
    for (int c = 0; c < 3 && obj.count > 0; ++c) {
      obj.mean[c] = sum[c] / obj.count;
      obj.stddev[c] = std::sqrt(std::max(0.0, sq[c] / obj.count - obj.mean[c] * obj.mean[c]));
    }
  }

  constexpr int kFeatherPx = 2;
  MaskedCrop adjusted = crop;
  const auto edge_dist = detail::opaque_edge_distance(crop.raster, kFeatherPx + 1);
  for (int cy = 0; cy < ch; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      std::uint8_t* p = adjusted.raster.pixel(cx, cy);
      if (p[3] == 0) continue;
      if (bg.count > 0 && obj.count > 0) {
        for (int c = 0; c < 3; ++c) {
          const double target_mean = obj.mean[c] + strength * (bg.mean[c] - obj.mean[c]);
          const double scale =
              obj.stddev[c] > 1e-9
                  ? (obj.stddev[c] + strength * (bg.stddev[c] - obj.stddev[c])) /
                        obj.stddev[c]
                  : 1.0;
          const double v = (p[c] - obj.mean[c]) * scale + target_mean;
          p[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
      const int d = edge_dist[static_cast<std::size_t>(cy) * cw + cx];
      if (d <= kFeatherPx) {
        // d >= 1 for opaque pixels, so the weight never reaches zero.
        const double weight = static_cast<double>(d) / (kFeatherPx + 1);
        p[3] = static_cast<std::uint8_t>(
            std::max(1L, std::lround(p[3] * weight)));
      }
    }
  }
  return composite(base, adjusted, x, y);
}

// ---------------------------------------------------------------------------
// Opposite-class insertion (mosaics)
// ---------------------------------------------------------------------------

struct InsertResult {
  Raster raster;
  Annotation annotation;
};

/// Paste one object whose class differs from the mosaic's source class at a
/// seeded-uniform position fully inside the mosaic; the annotation box is the
/// object's exact opaque extent. Oversized objects are scaled down to fit.
inline InsertResult insert_opposite_class_object(
    const Raster& mosaic, int mosaic_class,
    const std::vector<PasteObject>& objects, std::uint64_t seed) {
  std::vector<const PasteObject*> candidates;
  for (const PasteObject& o : objects) {
    if (o.class_id != mosaic_class) candidates.push_back(&o);
  }
  if (candidates.empty()) {
    throw_validation("insert_opposite_class_object: no object of a class "
                     "other than the mosaic's");
  }
  auto rng = make_rng(seed);
  const PasteObject& chosen = *candidates[uniform_below(rng, candidates.size())];

  MaskedCrop placed = chosen.crop;
  if (placed.raster.width > mosaic.width || placed.raster.height > mosaic.height) {
    const double fit = 0.9 * std::min(
        static_cast<double>(mosaic.width) / placed.raster.width,
        static_cast<double>(mosaic.height) / placed.raster.height);
    const int nw = std::max(1, static_cast<int>(placed.raster.width * fit));
    const int nh = std::max(1, static_cast<int>(placed.raster.height * fit));
    placed = make_masked_crop(resize(placed.raster, nw, nh));
  }

  const int max_x = mosaic.width - placed.raster.width;
  const int max_y = mosaic.height - placed.raster.height;
  const int px = static_cast<int>(uniform_int(rng, 0, max_x));
  const int py = static_cast<int>(uniform_int(rng, 0, max_y));

  InsertResult result;
  result.raster = composite(mosaic, placed, px, py);
  result.annotation.class_id = chosen.class_id;
  result.annotation.box = {placed.tight_box.x_min + px, placed.tight_box.y_min + py,
                           placed.tight_box.x_max + px, placed.tight_box.y_max + py};
  return result;
}

// ---------------------------------------------------------------------------
// Object pasting over clean backgrounds
// ---------------------------------------------------------------------------

struct PastedImage {
  ImageRecord record;  // new file name, original dimensions and flight meta
  Raster raster;
};

struct PasteRunResult {
  AnnotatedDataset dataset;
  std::vector<PastedImage> images;
  std::vector<std::string> warnings;
};

inline void validate_paste_config(const PasteConfig& cfg) {
  if (cfg.min_objects_per_image < 0 ||
      cfg.max_objects_per_image < cfg.min_objects_per_image) {
    throw_validation("paste: objects_per_image range is empty");
  }
  if (cfg.margin_px < 0) throw_validation("paste: margin must be >= 0");
  if (cfg.blend_strength < 0.0 || cfg.blend_strength > 1.0) {
    throw_validation("paste: blend_strength must be in [0,1]");
  }
  double total = 0.0;
  for (const auto& [class_id, weight] : cfg.class_mix) {
    if (weight < 0.0) throw_validation("paste: class weights must be >= 0");
    total += weight;
  }
  if (cfg.class_mix.empty() || total <= 0.0) {
    throw_validation("paste: class_mix must have positive total weight");
  }
}

namespace detail {

inline int pick_class(std::mt19937_64& rng, const std::map<int, double>& mix) {
  double total = 0.0;
  for (const auto& [class_id, weight] : mix) total += weight;
  double u = uniform_unit(rng) * total;
  for (const auto& [class_id, weight] : mix) {
    u -= weight;
    if (u < 0.0) return class_id;
  }
  return mix.rbegin()->first;
}

}  // namespace detail

/// Distribute, scale, place and blend objects over verified object-free
/// backgrounds, emitting exact auto-labels. Placement retries up to 50 times
/// to respect the pairwise IoU <= 0.3 cap, then skips the object with a
/// warning. Per-image RNG streams are derived from (seed, image id), so the
/// run is reproducible for any worker count.
inline PasteRunResult generate_pasted_dataset(
    const std::vector<ImageRecord>& backgrounds,
    const std::vector<PasteObject>& objects, const PasteConfig& cfg,
    const std::vector<ClassLabel>& classes,
    const std::filesystem::path& images_root = {}, int workers = 1) {
  if (backgrounds.empty()) throw_validation("paste: no background images");
  if (objects.empty()) throw_validation("paste: no objects to paste");
  validate_paste_config(cfg);

  // Only classes that actually have objects can be drawn.
  std::map<int, std::vector<const PasteObject*>> by_class;
  for (const PasteObject& o : objects) by_class[o.class_id].push_back(&o);
  std::map<int, double> mix;
  for (const auto& [class_id, weight] : cfg.class_mix) {
    if (weight > 0.0 && by_class.count(class_id)) mix[class_id] = weight;
  }
  if (mix.empty()) {
    throw_validation("paste: class_mix matches no supplied object class");
  }

  struct PerImage {
    PastedImage image;
    std::vector<Annotation> annotations;
    std::vector<std::string> warnings;
  };
  auto paste_one = [&](std::size_t index) {
    const ImageRecord& bg = backgrounds[index];
    PerImage out;
    auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(bg.id));
    Raster raster = load_image(images_root / bg.file_name);

    std::optional<double> gsd;
    if (bg.flight_meta) {
      gsd = compute_gsd(*bg.flight_meta, raster.width);
    } else {
      out.warnings.push_back("image " + std::to_string(bg.id) +
                             ": no flight metadata, pasting unscaled");
    }

    const int count = static_cast<int>(
        uniform_int(rng, cfg.min_objects_per_image, cfg.max_objects_per_image));
    std::vector<BoundingBox> placed_boxes;
    for (int k = 0; k < count; ++k) {
      const int class_id = detail::pick_class(rng, mix);
      const auto& pool = by_class.at(class_id);
      const PasteObject& obj = *pool[uniform_below(rng, pool.size())];

      MaskedCrop scaled;
      try {
        scaled = gsd ? scale_object(obj, *gsd)
                     : make_masked_crop(crop(obj.crop.raster, obj.crop.tight_box));
      } catch (const Error& e) {
        out.warnings.push_back("image " + std::to_string(bg.id) + ": " + e.what());
        continue;
      }

      const int min_x = cfg.margin_px;
      const int min_y = cfg.margin_px;
      const int max_x = raster.width - cfg.margin_px - scaled.raster.width;
      const int max_y = raster.height - cfg.margin_px - scaled.raster.height;
      if (max_x < min_x || max_y < min_y) {
        out.warnings.push_back("image " + std::to_string(bg.id) +
                               ": object does not fit inside the margins");
        continue;
      }

      bool accepted = false;
      for (int attempt = 0; attempt < 50 && !accepted; ++attempt) {
        const int px = static_cast<int>(uniform_int(rng, min_x, max_x));
        const int py = static_cast<int>(uniform_int(rng, min_y, max_y));
        const BoundingBox box{scaled.tight_box.x_min + px, scaled.tight_box.y_min + py,
                              scaled.tight_box.x_max + px, scaled.tight_box.y_max + py};
        bool clear = true;
        for (const BoundingBox& other : placed_boxes) {
          if (iou(box, other) > 0.3) {  // tight boxes always have area
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        raster = blend(raster, scaled, px, py, cfg.blend_strength);
        placed_boxes.push_back(box);
        Annotation a;
        a.image_id = bg.id;
        a.box = box;
        a.class_id = class_id;
        out.annotations.push_back(std::move(a));
        accepted = true;
      }
      if (!accepted) {
        out.warnings.push_back("image " + std::to_string(bg.id) +
                               ": placement failed after 50 attempts");
      }
    }

    out.image.record = bg;
    const auto stem = std::filesystem::path(bg.file_name).stem().string();
    out.image.record.file_name = stem + "_pasted.png";
    out.image.record.width = raster.width;
    out.image.record.height = raster.height;
    out.image.raster = std::move(raster);
    return out;
  };

  // Per-image RNG streams derive from (seed, image id), so any worker count
  // produces the same result; outputs are collected in background order.
  auto per_image = parallel_map(backgrounds.size(), workers, paste_one);

  PasteRunResult result;
  result.dataset.classes = classes;
  for (PerImage& p : per_image) {
    result.dataset.images.push_back(p.image.record);
    for (Annotation& a : p.annotations) {
      result.dataset.annotations.push_back(std::move(a));
    }
    for (std::string& w : p.warnings) result.warnings.push_back(std::move(w));
    result.images.push_back(std::move(p.image));
  }
  return result;
}

}  // namespace aerolabel
