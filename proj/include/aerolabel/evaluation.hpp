#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"

namespace aerolabel {

// ---------------------------------------------------------------------------
// Greedy matching
// ---------------------------------------------------------------------------

struct MatchResult {
  std::vector<std::pair<Detection, Annotation>> true_positives;
  std::vector<Detection> false_positives;
  std::vector<Annotation> false_negatives;
};

namespace detail {

inline double safe_iou(const BoundingBox& a, const BoundingBox& b) {
  if (a.area() <= 0.0 && b.area() <= 0.0) return 0.0;
  return iou(a, b);
}

inline std::vector<std::int64_t> image_id_universe(
    const std::vector<Detection>& preds, const std::vector<Annotation>& gts) {
  std::set<std::int64_t> ids;
  for (const auto& p : preds) ids.insert(p.image_id);
  for (const auto& g : gts) ids.insert(g.image_id);
  return {ids.begin(), ids.end()};
}

inline void check_image_universe(const std::vector<Detection>& preds,
                                 const std::vector<Annotation>& gts,
                                 const std::vector<ImageRecord>* images) {
  if (!images) return;
  std::set<std::int64_t> known;
  for (const auto& im : *images) known.insert(im.id);
  for (const auto& p : preds) {
    if (!known.count(p.image_id)) {
      throw_processing("evaluation: prediction references image id " +
                       std::to_string(p.image_id) + " outside the image set");
    }
  }
  for (const auto& g : gts) {
    if (!known.count(g.image_id)) {
      throw_processing("evaluation: ground truth references image id " +
                       std::to_string(g.image_id) + " outside the image set");
    }
  }
}

/// Indices of `preds` with confidence >= threshold, ordered by descending
/// confidence (stable on ties).
inline std::vector<std::size_t> confident_sorted(
    const std::vector<Detection>& preds, double confidence_threshold) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].confidence >= confidence_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });
  return order;
}

}  // namespace detail

/// Per image and class: confidence-thresholded predictions, highest first,
/// greedily matched to the unmatched ground truth with the best IoU at or
/// above the threshold. Predictions below the confidence threshold are
/// discarded before bucketing.
inline MatchResult match_detections(const std::vector<Detection>& preds,
                                    const std::vector<Annotation>& gts,
                                    double iou_threshold,
                                    double confidence_threshold,
                                    const std::vector<ImageRecord>* images = nullptr) {
  detail::check_image_universe(preds, gts, images);
  MatchResult result;
  std::vector<bool> gt_matched(gts.size(), false);

  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> gt_groups;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    gt_groups[{gts[i].image_id, gts[i].class_id}].push_back(i);
  }

  for (std::size_t pi : detail::confident_sorted(preds, confidence_threshold)) {
    const Detection& p = preds[pi];
    const auto it = gt_groups.find({p.image_id, p.class_id});
    double best_iou = 0.0;
    std::size_t best_gt = gts.size();
    if (it != gt_groups.end()) {
      for (std::size_t gi : it->second) {
        if (gt_matched[gi]) continue;
        const double v = detail::safe_iou(p.box, gts[gi].box);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best_gt = gi;
        }
      }
    }
    if (best_gt < gts.size()) {
      gt_matched[best_gt] = true;
      result.true_positives.emplace_back(p, gts[best_gt]);
    } else {
      result.false_positives.push_back(p);
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!gt_matched[gi]) result.false_negatives.push_back(gts[gi]);
  }
  return result;
}

/// The zero-IoU criterion: a ground-truth box is a false negative only when
/// NO confidence-thresholded prediction overlaps it at all, regardless of
/// class. A prediction is a false positive when no same-class ground truth
/// overlaps it (so a wrong-class hit on a real object still counts as FP).
/// Both sides keep their image ids so crops can be cut later.
inline std::pair<std::vector<Detection>, std::vector<Annotation>> extract_fp_fn(
    const std::vector<Detection>& preds, const std::vector<Annotation>& gts,
    double confidence_threshold = 0.3,
    const std::vector<ImageRecord>* images = nullptr) {
  detail::check_image_universe(preds, gts, images);
  std::map<std::int64_t, std::vector<const Annotation*>> gt_by_image;
  for (const Annotation& g : gts) gt_by_image[g.image_id].push_back(&g);
  std::map<std::int64_t, std::vector<const Detection*>> pred_by_image;
  for (const Detection& p : preds) {
    if (p.confidence >= confidence_threshold) pred_by_image[p.image_id].push_back(&p);
  }

  std::vector<Detection> fps;
  for (const auto& [image_id, image_preds] : pred_by_image) {
    const auto git = gt_by_image.find(image_id);
    for (const Detection* p : image_preds) {
      bool same_class_overlap = false;
      if (git != gt_by_image.end()) {
        for (const Annotation* g : git->second) {
          if (g->class_id == p->class_id &&
              intersection_area(p->box, g->box) > 0.0) {
            same_class_overlap = true;
            break;
          }
        }
      }
      if (!same_class_overlap) fps.push_back(*p);
    }
  }

  std::vector<Annotation> fns;
  for (const Annotation& g : gts) {
    const auto pit = pred_by_image.find(g.image_id);
    bool any_overlap = false;
    if (pit != pred_by_image.end()) {
      for (const Detection* p : pit->second) {
        if (intersection_area(p->box, g.box) > 0.0) {
          any_overlap = true;
          break;
        }
      }
    }
    if (!any_overlap) fns.push_back(g);
  }
  return {std::move(fps), std::move(fns)};
}

// ---------------------------------------------------------------------------
// COCO-protocol mAP / mAR
// ---------------------------------------------------------------------------

struct MetricReport {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  double map_75 = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
  double mar_50_95 = 0.0;
  std::map<int, double> per_class_ap;  // class id -> AP@[0.50:0.95]
};

namespace detail {

struct AreaRange {
  double lo = 0.0;
  double hi = 1e10;
  bool contains(double area) const { return area >= lo && area <= hi; }
};

// COCO size buckets keyed by ground-truth box area.
inline constexpr std::array<AreaRange, 4> kAreaRanges{
    AreaRange{0.0, 1e10},             // all
    AreaRange{0.0, 32.0 * 32.0},      // small
    AreaRange{32.0 * 32.0, 96.0 * 96.0},  // medium
    AreaRange{96.0 * 96.0, 1e10},     // large
};
inline constexpr int kMaxDetections = 100;
inline constexpr int kIouThresholds = 10;   // 0.50 : 0.05 : 0.95
inline constexpr int kRecallPoints = 101;   // 0.00 : 0.01 : 1.00

inline double iou_threshold_at(int t) { return 0.5 + 0.05 * t; }

/// One detection's fate for a fixed (class, IoU threshold, area range).
struct ScoredOutcome {
  double score = 0.0;
  bool matched = false;
  bool ignored = false;
};

struct ClassAccumulator {
  // Outcomes concatenated over images in id order; gt count excludes ignored.
  std::vector<ScoredOutcome> outcomes;
  std::int64_t eligible_gt = 0;
};

/// Greedy COCO matching for one image and class at one IoU threshold with
/// ignore semantics: ground truth outside the area range may still absorb a
/// detection, but neither side is scored; unmatched detections outside the
/// range are likewise ignored rather than counted as false positives.
inline void evaluate_image_class(
    const std::vector<const Detection*>& dets_sorted,  // score desc, truncated
    const std::vector<const Annotation*>& gts, const AreaRange& range,
    double iou_threshold, ClassAccumulator& acc) {
  const std::size_t ng = gts.size();
  std::vector<bool> gt_ignored(ng);
  std::vector<std::size_t> gt_order(ng);
  for (std::size_t g = 0; g < ng; ++g) gt_ignored[g] = !range.contains(gts[g]->box.area());
  std::iota(gt_order.begin(), gt_order.end(), 0);
  std::stable_sort(gt_order.begin(), gt_order.end(), [&](std::size_t a, std::size_t b) {
    return static_cast<int>(gt_ignored[a]) < static_cast<int>(gt_ignored[b]);
  });

  std::vector<bool> gt_matched(ng, false);
  for (const Detection* d : dets_sorted) {
    double best = std::min(iou_threshold, 1.0 - 1e-10);
    std::size_t match = ng;
    for (std::size_t g : gt_order) {
      if (gt_matched[g]) continue;
      if (match < ng && !gt_ignored[match] && gt_ignored[g]) break;
      const double v = safe_iou(d->box, gts[g]->box);
      if (v < best) continue;
      best = v;
      match = g;
    }
    ScoredOutcome outcome{d->confidence, false, false};
    if (match < ng) {
      gt_matched[match] = true;
      outcome.matched = true;
      outcome.ignored = gt_ignored[match];
    } else {
      outcome.ignored = !range.contains(d->box.area());
    }
    if (!outcome.ignored) acc.outcomes.push_back(outcome);
  }
  for (std::size_t g = 0; g < ng; ++g) {
    if (!gt_ignored[g]) ++acc.eligible_gt;
  }
}

/// 101-point interpolated average precision; negative when the class has no
/// eligible ground truth (excluded from means, the COCO -1 convention).
inline std::pair<double, double> ap_and_recall(ClassAccumulator& acc) {
  if (acc.eligible_gt == 0) return {-1.0, -1.0};
  std::stable_sort(acc.outcomes.begin(), acc.outcomes.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) {
                     return a.score > b.score;
                   });
  const std::size_t n = acc.outcomes.size();
  std::vector<double> precision(n), recall(n);
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (acc.outcomes[i].matched ? tp : fp)++;
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    recall[i] = static_cast<double>(tp) / static_cast<double>(acc.eligible_gt);
  }
  const double final_recall = n ? recall.back() : 0.0;

  for (std::size_t i = n; i > 1; --i) {
    precision[i - 2] = std::max(precision[i - 2], precision[i - 1]);
  }
  double ap_sum = 0.0;
  std::size_t idx = 0;
  for (int r = 0; r < kRecallPoints; ++r) {
    const double target = static_cast<double>(r) / (kRecallPoints - 1);
    while (idx < n && recall[idx] < target) ++idx;
    if (idx < n) ap_sum += precision[idx];
  }
  return {ap_sum / kRecallPoints, final_recall};
}

}  // namespace detail

/// COCO-protocol metrics: AP averaged over IoU thresholds 0.50:0.05:0.95 and
/// classes with 101-point interpolation, size buckets by ground-truth area
/// (small < 32^2, medium < 96^2, large otherwise), recall capped at 100
/// detections per image and class. Classes without eligible ground truth are
/// excluded from every mean; a metric with no eligible class reports 0.
inline MetricReport compute_map(const std::vector<Detection>& preds,
                                const AnnotatedDataset& gt) {
  if (gt.annotations.empty()) {
    throw_validation("compute_map: ground truth is empty");
  }

  std::vector<int> class_ids;
  for (const auto& c : gt.classes) class_ids.push_back(c.id);
  std::sort(class_ids.begin(), class_ids.end());

  // Group and pre-sort once per (image, class).
  std::map<std::pair<std::int64_t, int>, std::vector<const Detection*>> dets;
  for (const Detection& d : preds) dets[{d.image_id, d.class_id}].push_back(&d);
  for (auto& [key, list] : dets) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Detection* a, const Detection* b) {
                       return a->confidence > b->confidence;
                     });
    if (list.size() > detail::kMaxDetections) list.resize(detail::kMaxDetections);
  }
  std::map<std::pair<std::int64_t, int>, std::vector<const Annotation*>> gts;
  for (const Annotation& a : gt.annotations) gts[{a.image_id, a.class_id}].push_back(&a);

  std::set<std::int64_t> image_ids;
  for (const auto& im : gt.images) image_ids.insert(im.id);
  for (const auto& [key, list] : dets) image_ids.insert(key.first);

  const std::size_t n_classes = class_ids.size();
  const std::size_t n_areas = detail::kAreaRanges.size();
  // ap[t][class][area], recall likewise.
  std::vector<double> ap(detail::kIouThresholds * n_classes * n_areas, -1.0);
  std::vector<double> rec(ap.size(), -1.0);
  auto flat = [&](int t, std::size_t c, std::size_t a) {
    return (static_cast<std::size_t>(t) * n_classes + c) * n_areas + a;
  };

  static const std::vector<const Detection*> kNoDets;
  static const std::vector<const Annotation*> kNoGts;
  for (int t = 0; t < detail::kIouThresholds; ++t) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      for (std::size_t a = 0; a < n_areas; ++a) {
        detail::ClassAccumulator acc;
        for (std::int64_t image_id : image_ids) {
          const auto dit = dets.find({image_id, class_ids[c]});
          const auto git = gts.find({image_id, class_ids[c]});
          detail::evaluate_image_class(
              dit != dets.end() ? dit->second : kNoDets,
              git != gts.end() ? git->second : kNoGts, detail::kAreaRanges[a],
              detail::iou_threshold_at(t), acc);
        }
        const auto [ap_v, rec_v] = detail::ap_and_recall(acc);
        ap[flat(t, c, a)] = ap_v;
        rec[flat(t, c, a)] = rec_v;
      }
    }
  }

  auto mean_valid = [](const std::vector<double>& values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : values) {
      if (v >= 0.0) {
        sum += v;
        ++n;
      }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  };
  auto collect_ap = [&](std::optional<int> only_t, std::size_t area) {
    std::vector<double> values;
    for (int t = 0; t < detail::kIouThresholds; ++t) {
      if (only_t && t != *only_t) continue;
      for (std::size_t c = 0; c < n_classes; ++c) values.push_back(ap[flat(t, c, area)]);
    }
    return values;
  };

  MetricReport report;
  report.map_50_95 = mean_valid(collect_ap(std::nullopt, 0));
  report.map_50 = mean_valid(collect_ap(0, 0));
  report.map_75 = mean_valid(collect_ap(5, 0));
  report.map_small = mean_valid(collect_ap(std::nullopt, 1));
  report.map_medium = mean_valid(collect_ap(std::nullopt, 2));
  report.map_large = mean_valid(collect_ap(std::nullopt, 3));
  {
    std::vector<double> values;
    for (int t = 0; t < detail::kIouThresholds; ++t) {
      for (std::size_t c = 0; c < n_classes; ++c) values.push_back(rec[flat(t, c, 0)]);
    }
    report.mar_50_95 = mean_valid(values);
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<double> values;
    for (int t = 0; t < detail::kIouThresholds; ++t) values.push_back(ap[flat(t, c, 0)]);
    report.per_class_ap[class_ids[c]] = mean_valid(values);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

enum class Normalize { none, row, column };

/// Square matrix over the class catalog plus a trailing background slot.
/// Cell (i, j) counts ground truth of class i matched to predictions of
/// class j; false negatives land in (i, background), false positives in
/// (background, j).
struct ConfusionMatrix {
  std::vector<int> class_ids;                // catalog order; background last
  std::vector<std::vector<double>> cells;    // (n+1) x (n+1)

  std::size_t background_index() const { return class_ids.size(); }
};

/// Matching here is class-agnostic (a wrong-class prediction on a real object
/// must land off-diagonal, not in background), greedy by descending
/// confidence with the highest-IoU unmatched ground truth.
inline ConfusionMatrix confusion_matrix(const std::vector<Detection>& preds,
                                        const std::vector<Annotation>& gts,
                                        const std::vector<ClassLabel>& classes,
                                        double iou_threshold = 0.5,
                                        double confidence_threshold = 0.3,
                                        Normalize normalize = Normalize::none,
                                        const std::vector<ImageRecord>* images = nullptr) {
  detail::check_image_universe(preds, gts, images);
  ConfusionMatrix m;
  for (const auto& c : classes) m.class_ids.push_back(c.id);
  const std::size_t n = m.class_ids.size() + 1;
  m.cells.assign(n, std::vector<double>(n, 0.0));
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < m.class_ids.size(); ++i) index[m.class_ids[i]] = i;
  auto class_index = [&](int class_id) -> std::size_t {
    const auto it = index.find(class_id);
    if (it == index.end()) {
      throw_processing("confusion_matrix: unknown class id " +
                       std::to_string(class_id));
    }
    return it->second;
  };
  const std::size_t bg = m.background_index();

  std::map<std::int64_t, std::vector<std::size_t>> gt_by_image;
  for (std::size_t i = 0; i < gts.size(); ++i) gt_by_image[gts[i].image_id].push_back(i);
  std::vector<bool> gt_matched(gts.size(), false);

  for (std::size_t pi : detail::confident_sorted(preds, confidence_threshold)) {
    const Detection& p = preds[pi];
    double best = 0.0;
    std::size_t best_gt = gts.size();
    const auto it = gt_by_image.find(p.image_id);
    if (it != gt_by_image.end()) {
      for (std::size_t gi : it->second) {
        if (gt_matched[gi]) continue;
        const double v = detail::safe_iou(p.box, gts[gi].box);
        if (v >= iou_threshold && v > best) {
          best = v;
          best_gt = gi;
        }
      }
    }
    if (best_gt < gts.size()) {
      gt_matched[best_gt] = true;
      m.cells[class_index(gts[best_gt].class_id)][class_index(p.class_id)] += 1.0;
    } else {
      m.cells[bg][class_index(p.class_id)] += 1.0;
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!gt_matched[gi]) m.cells[class_index(gts[gi].class_id)][bg] += 1.0;
  }

  if (normalize == Normalize::row) {
    for (auto& row : m.cells) {
      double sum = 0.0;
      for (double v : row) sum += v;
      if (sum > 0.0) {
        for (double& v : row) v /= sum;
      }
    }
  } else if (normalize == Normalize::column) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += m.cells[i][j];
      if (sum > 0.0) {
        for (std::size_t i = 0; i < n; ++i) m.cells[i][j] /= sum;
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Text reports
// ---------------------------------------------------------------------------

/// Aligned table with the familiar COCO row labels.
inline std::string format_metric_table(const MetricReport& r,
                                       const std::string& heading = "mAP") {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  auto row = [&](const std::string& label, double value) {
    os << "  " << std::left << std::setw(22) << label << value << "\n";
  };
  os << heading << "\n";
  row("IoU=0.50:0.95", r.map_50_95);
  row("IoU=0.50", r.map_50);
  row("IoU=0.75", r.map_75);
  row("small", r.map_small);
  row("medium", r.map_medium);
  row("large", r.map_large);
  row("mAR @ IoU=0.50:0.95", r.mar_50_95);
  return os.str();
}

inline std::string format_confusion_matrix(const ConfusionMatrix& m,
                                           const std::vector<ClassLabel>& classes) {
  std::map<int, std::string> names;
  for (const auto& c : classes) names[c.id] = c.name;
  std::vector<std::string> labels;
  for (int id : m.class_ids) labels.push_back(names.count(id) ? names[id] : std::to_string(id));
  labels.push_back("background");

  std::size_t width = 10;
  for (const auto& l : labels) width = std::max(width, l.size() + 2);
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << std::setw(static_cast<int>(width)) << "gt \\ pred";
  for (const auto& l : labels) os << std::setw(static_cast<int>(width)) << l;
  os << "\n";
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    os << std::setw(static_cast<int>(width)) << labels[i];
    for (double v : m.cells[i]) os << std::setw(static_cast<int>(width)) << v;
    os << "\n";
  }
  return os.str();
}

}  // namespace aerolabel
