#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"

namespace aerolabel {

enum class OverlapMetric { iou, giou };
enum class ClassMode { same_class, all_classes };

inline std::string to_string(OverlapMetric m) {
  return m == OverlapMetric::iou ? "iou" : "giou";
}
inline std::string to_string(ClassMode m) {
  return m == ClassMode::same_class ? "same_class" : "all_classes";
}

namespace detail {

/// Pairwise overlap score with the degenerate case defused: two zero-area
/// boxes never merge instead of raising.
inline double overlap_metric(OverlapMetric metric, const BoundingBox& a,
                             const BoundingBox& b) {
  if (a.area() <= 0.0 && b.area() <= 0.0) {
    return metric == OverlapMetric::iou ? 0.0 : -1.0;
  }
  return metric == OverlapMetric::iou ? iou(a, b) : giou(a, b);
}

struct UnionFind {
  std::vector<std::size_t> parent;

  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

template <typename Fn>
std::vector<std::vector<std::size_t>> partition_by_image(
    const std::vector<Detection>& dets, Fn&& per_image) {
  std::map<std::int64_t, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    by_image[dets[i].image_id].push_back(i);
  }
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [image_id, indices] : by_image) {
    auto g = per_image(indices);
    groups.insert(groups.end(), g.begin(), g.end());
  }
  return groups;
}

/// Merge detections into groups by repeated connected-components until no two
/// group hulls still satisfy `joins`. `compatible` limits which pairs may
/// join (same class, same image, ...).
template <typename Joins, typename Compatible>
std::vector<std::vector<std::size_t>> merge_groups_fixpoint(
    const std::vector<Detection>& dets, const std::vector<std::size_t>& indices,
    Joins&& joins, Compatible&& compatible) {
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(indices.size());
  std::vector<BoundingBox> hulls;
  for (std::size_t i : indices) {
    groups.push_back({i});
    hulls.push_back(dets[i].box);
  }

  for (bool changed = true; changed && groups.size() > 1;) {
    changed = false;
    UnionFind uf(groups.size());
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        if (!compatible(groups[a].front(), groups[b].front())) continue;
        if (joins(hulls[a], hulls[b])) {
          uf.unite(a, b);
          changed = true;
        }
      }
    }
    if (!changed) break;
    std::map<std::size_t, std::vector<std::size_t>> merged;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& bucket = merged[uf.find(g)];
      bucket.insert(bucket.end(), groups[g].begin(), groups[g].end());
    }
    std::vector<std::vector<std::size_t>> next_groups;
    std::vector<BoundingBox> next_hulls;
    for (auto& [root, members] : merged) {
      std::sort(members.begin(), members.end());
      std::vector<BoundingBox> boxes;
      boxes.reserve(members.size());
      for (std::size_t i : members) boxes.push_back(dets[i].box);
      next_hulls.push_back(union_box(boxes));
      next_groups.push_back(std::move(members));
    }
    groups = std::move(next_groups);
    hulls = std::move(next_hulls);
  }
  return groups;
}

inline Detection merged_detection(const std::vector<Detection>& dets,
                                  const std::vector<std::size_t>& members,
                                  ClassMode class_mode) {
  if (members.size() == 1) return dets[members.front()];
  std::vector<BoundingBox> boxes;
  boxes.reserve(members.size());
  std::set<std::string> sources;
  std::size_t best = members.front();
  for (std::size_t i : members) {
    boxes.push_back(dets[i].box);
    sources.insert(dets[i].source);
    if (dets[i].confidence > dets[best].confidence) best = i;
  }
  Detection out;
  out.image_id = dets[members.front()].image_id;
  out.box = union_box(boxes);
  out.confidence = dets[best].confidence;
  out.class_id = class_mode == ClassMode::same_class
                     ? dets[members.front()].class_id
                     : dets[best].class_id;
  std::string joined;
  for (const std::string& s : sources) {
    if (!joined.empty()) joined += ",";
    joined += s;
  }
  out.source = "merged(" + joined + ")";
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SmallBB
// ---------------------------------------------------------------------------

/// Drop boxes smaller than the threshold in width AND height; a box must pass
/// both to survive. Order preserved.
inline std::vector<Detection> small_bb(const std::vector<Detection>& dets,
                                       double min_w, double min_h) {
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (const Detection& d : dets) {
    if (d.box.width() >= min_w && d.box.height() >= min_h) out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// MergeBB
// ---------------------------------------------------------------------------

inline void validate_merge_threshold(OverlapMetric metric, double threshold) {
  if (metric == OverlapMetric::iou && (threshold < 0.0 || threshold > 1.0)) {
    throw_validation("merge_bb: IoU threshold must be in [0,1]");
  }
  if (metric == OverlapMetric::giou && (threshold < -1.0 || threshold > 1.0)) {
    throw_validation("merge_bb: GIoU threshold must be in [-1,1]");
  }
}

/// Merge detections whose overlap clears the threshold (inclusive), taking
/// the transitive closure and iterating until no two outputs still clear it.
/// A merged detection spans its members' hull, keeps the max confidence, and
/// lists contributing sources. Groups never span images; in same_class mode
/// they never span classes.
inline std::vector<Detection> merge_bb(const std::vector<Detection>& dets,
                                       OverlapMetric metric, double threshold,
                                       ClassMode class_mode) {
  validate_merge_threshold(metric, threshold);
  auto compatible = [&](std::size_t a, std::size_t b) {
    return class_mode == ClassMode::all_classes ||
           dets[a].class_id == dets[b].class_id;
  };
  auto joins = [&](const BoundingBox& a, const BoundingBox& b) {
    return detail::overlap_metric(metric, a, b) >= threshold;
  };
  auto groups = detail::partition_by_image(dets, [&](const std::vector<std::size_t>& idx) {
    return detail::merge_groups_fixpoint(dets, idx, joins, compatible);
  });
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::vector<Detection> out;
  out.reserve(groups.size());
  for (const auto& members : groups) {
    out.push_back(detail::merged_detection(dets, members, class_mode));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MaskBB
// ---------------------------------------------------------------------------

/// The four-step mask filter, applied per class over one image's detections:
/// (1) expand every box and merge overlapping expansions into hulls,
/// (2) split each hull into a rows x cols cell grid,
/// (3) keep only cells overlapping some ORIGINAL box of the class,
/// (4) regroup surviving cells that overlap or share an edge and emit the
///     hull of each group.
inline std::vector<Detection> mask_bb(const std::vector<Detection>& dets,
                                      double expand_factor,
                                      std::pair<int, int> grid,
                                      const BoundingBox& image_bounds) {
  if (!(expand_factor >= 1.0)) {
    throw_validation("mask_bb: expand_factor must be >= 1");
  }
  const auto [rows, cols] = grid;
  if (rows < 1 || cols < 1) throw_validation("mask_bb: grid dims must be >= 1");

  // Edge-sharing counts as connected, corner-point contact does not.
  auto cells_connected = [](const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    return iw >= 0.0 && ih >= 0.0 && (iw > 0.0 || ih > 0.0);
  };

  std::map<std::int64_t, std::map<int, std::vector<std::size_t>>> per_image_class;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    per_image_class[dets[i].image_id][dets[i].class_id].push_back(i);
  }

  std::vector<Detection> out;
  for (const auto& [image_id, per_class] : per_image_class) {
    for (const auto& [class_id, indices] : per_class) {
      // Step 1: expanded hulls.
      std::vector<Detection> expanded;
      expanded.reserve(indices.size());
      for (std::size_t i : indices) {
        Detection d = dets[i];
        d.box = expand(d.box, expand_factor, image_bounds);
        expanded.push_back(std::move(d));
      }
      std::vector<std::size_t> exp_idx(expanded.size());
      std::iota(exp_idx.begin(), exp_idx.end(), 0);
      auto hull_groups = detail::merge_groups_fixpoint(
          expanded, exp_idx,
          [](const BoundingBox& a, const BoundingBox& b) {
            return boxes_overlap(a, b);
          },
          [](std::size_t, std::size_t) { return true; });

      // Steps 2+3: per-hull grid split, keep cells touching an original box.
      std::vector<BoundingBox> survivors;
      for (const auto& members : hull_groups) {
        std::vector<BoundingBox> boxes;
        for (std::size_t m : members) boxes.push_back(expanded[m].box);
        const BoundingBox hull = union_box(boxes);
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) {
            // Shared cell edges are computed with identical arithmetic so
            // neighbors meet exactly; outer edges snap to the hull to avoid
            // 1-ulp overshoot past the image bounds.
            const BoundingBox cell{
                c == 0 ? hull.x_min : hull.x_min + hull.width() * c / cols,
                r == 0 ? hull.y_min : hull.y_min + hull.height() * r / rows,
                c + 1 == cols ? hull.x_max
                              : hull.x_min + hull.width() * (c + 1) / cols,
                r + 1 == rows ? hull.y_max
                              : hull.y_min + hull.height() * (r + 1) / rows};
            bool keep = false;
            for (std::size_t i : indices) {
              if (intersection_area(cell, dets[i].box) > 0.0) {
                keep = true;
                break;
              }
            }
            if (keep) survivors.push_back(cell);
          }
        }
      }

      // Step 4: regroup touching cells, hull per group.
      detail::UnionFind uf(survivors.size());
      for (std::size_t a = 0; a < survivors.size(); ++a) {
        for (std::size_t b = a + 1; b < survivors.size(); ++b) {
          if (cells_connected(survivors[a], survivors[b])) uf.unite(a, b);
        }
      }
      std::map<std::size_t, std::vector<BoundingBox>> cell_groups;
      for (std::size_t i = 0; i < survivors.size(); ++i) {
        cell_groups[uf.find(i)].push_back(survivors[i]);
      }
      for (const auto& [root, cells] : cell_groups) {
        Detection d;
        d.image_id = image_id;
        d.class_id = class_id;
        d.box = union_box(cells);
        d.confidence = 0.0;
        for (std::size_t i : indices) {
          if (intersection_area(d.box, dets[i].box) > 0.0) {
            d.confidence = std::max(d.confidence, dets[i].confidence);
          }
        }
        d.source = "maskbb";
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// VoteFilter
// ---------------------------------------------------------------------------

/// Keep a detection only when at least `min_votes` distinct models (counting
/// its own) placed a same-class box at IoU >= iou_threshold to it, then merge
/// the surviving overlapping boxes per class.
inline std::vector<Detection> vote_filter(
    const std::map<std::string, std::vector<Detection>>& per_model,
    int min_votes, double iou_threshold) {
  if (min_votes < 1) throw_validation("vote_filter: min_votes must be >= 1");
  if (min_votes > static_cast<int>(per_model.size())) {
    throw_validation("vote_filter: min_votes exceeds the number of models");
  }
  if (iou_threshold < 0.0 || iou_threshold > 1.0) {
    throw_validation("vote_filter: iou_threshold must be in [0,1]");
  }

  struct Entry {
    Detection det;
    std::size_t model = 0;
  };
  std::vector<Entry> pool;  // map iteration keeps model order deterministic
  std::size_t model_index = 0;
  for (const auto& [model, dets] : per_model) {
    for (const Detection& d : dets) {
      Entry e{d, model_index};
      e.det.source = model;
      pool.push_back(std::move(e));
    }
    ++model_index;
  }

  std::vector<Detection> survivors;
  for (const Entry& e : pool) {
    std::set<std::size_t> voters;
    for (const Entry& other : pool) {
      if (other.det.image_id != e.det.image_id) continue;
      if (other.det.class_id != e.det.class_id) continue;
      if (e.det.box.area() <= 0.0 && other.det.box.area() <= 0.0) continue;
      if (iou(e.det.box, other.det.box) >= iou_threshold) voters.insert(other.model);
    }
    if (static_cast<int>(voters.size()) >= min_votes) survivors.push_back(e.det);
  }
  return merge_bb(survivors, OverlapMetric::iou, iou_threshold,
                  ClassMode::same_class);
}

// ---------------------------------------------------------------------------
// Filter chain
// ---------------------------------------------------------------------------

struct SmallBbStage {
  double min_width = 0.0;
  double min_height = 0.0;
};
struct MergeBbStage {
  OverlapMetric metric = OverlapMetric::iou;
  double threshold = 0.3;
  ClassMode class_mode = ClassMode::same_class;
};
struct MaskBbStage {
  double expand_factor = 1.5;
  int grid_rows = 3;
  int grid_cols = 3;
};
struct VoteStage {
  int min_votes = 3;
  double iou_threshold = 0.5;
};

using FilterStage = std::variant<SmallBbStage, MergeBbStage, MaskBbStage, VoteStage>;

struct FilterConfig {
  std::vector<FilterStage> stages;
};

inline std::string stage_name(const FilterStage& stage) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        std::ostringstream os;
        if constexpr (std::is_same_v<T, SmallBbStage>) {
          os << "small_bb(" << s.min_width << "x" << s.min_height << ")";
        } else if constexpr (std::is_same_v<T, MergeBbStage>) {
          os << "merge_bb(" << to_string(s.metric) << "," << s.threshold << ","
             << to_string(s.class_mode) << ")";
        } else if constexpr (std::is_same_v<T, MaskBbStage>) {
          os << "mask_bb(" << s.expand_factor << "," << s.grid_rows << "x"
             << s.grid_cols << ")";
        } else {
          os << "vote(" << s.min_votes << "," << s.iou_threshold << ")";
        }
        return os.str();
      },
      stage);
}

inline void validate_filter_config(const FilterConfig& config) {
  for (const FilterStage& stage : config.stages) {
    std::visit(
        [](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, SmallBbStage>) {
            if (s.min_width < 0.0 || s.min_height < 0.0) {
              throw_validation("small_bb: thresholds must be non-negative");
            }
          } else if constexpr (std::is_same_v<T, MergeBbStage>) {
            validate_merge_threshold(s.metric, s.threshold);
          } else if constexpr (std::is_same_v<T, MaskBbStage>) {
            if (!(s.expand_factor >= 1.0)) {
              throw_validation("mask_bb: expand_factor must be >= 1");
            }
            if (s.grid_rows < 1 || s.grid_cols < 1) {
              throw_validation("mask_bb: grid dims must be >= 1");
            }
          } else {
            if (s.min_votes < 1) throw_validation("vote: min_votes must be >= 1");
            if (s.iou_threshold < 0.0 || s.iou_threshold > 1.0) {
              throw_validation("vote: iou_threshold must be in [0,1]");
            }
          }
        },
        stage);
  }
}

struct StageCount {
  std::string stage;
  std::size_t boxes_in = 0;
  std::size_t boxes_out = 0;
};

struct FilterChainResult {
  std::vector<Detection> detections;
  std::vector<StageCount> counts;
};

/// Apply the configured stages in order, recording per-stage box counts for
/// the run report. Image bounds for MaskBB come from the image records. A
/// vote stage regroups the current stream by its source names.
inline FilterChainResult run_filter_chain(std::vector<Detection> dets,
                                          const FilterConfig& config,
                                          const std::vector<ImageRecord>& images) {
  validate_filter_config(config);
  std::map<std::int64_t, BoundingBox> bounds;
  for (const ImageRecord& im : images) bounds[im.id] = im.bounds();

  FilterChainResult result;
  for (const FilterStage& stage : config.stages) {
    StageCount count{stage_name(stage), dets.size(), 0};
    dets = std::visit(
        [&](const auto& s) -> std::vector<Detection> {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, SmallBbStage>) {
            return small_bb(dets, s.min_width, s.min_height);
          } else if constexpr (std::is_same_v<T, MergeBbStage>) {
            return merge_bb(dets, s.metric, s.threshold, s.class_mode);
          } else if constexpr (std::is_same_v<T, MaskBbStage>) {
            std::vector<Detection> out;
            std::map<std::int64_t, std::vector<Detection>> by_image;
            for (Detection& d : dets) by_image[d.image_id].push_back(std::move(d));
            for (auto& [image_id, image_dets] : by_image) {
              const auto it = bounds.find(image_id);
              if (it == bounds.end()) {
                throw_processing("filter chain: no image record for image id " +
                                 std::to_string(image_id));
              }
              auto filtered = mask_bb(image_dets, s.expand_factor,
                                      {s.grid_rows, s.grid_cols}, it->second);
              out.insert(out.end(), filtered.begin(), filtered.end());
            }
            return out;
          } else {
            std::map<std::string, std::vector<Detection>> per_model;
            for (Detection& d : dets) per_model[d.source].push_back(std::move(d));
            return vote_filter(per_model, s.min_votes, s.iou_threshold);
          }
        },
        stage);
    count.boxes_out = dets.size();
    result.counts.push_back(std::move(count));
  }
  result.detections = std::move(dets);
  return result;
}

}  // namespace aerolabel
