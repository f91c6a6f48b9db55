#pragma once

// Independent restatement of the COCO evaluation protocol, written with plain
// loops and none of the library's accumulation machinery: matching is redone
// from the published rule, and each of the 101 interpolation points is
// answered by a brute-force max-scan over the raw PR samples instead of the
// envelope + binary-search formulation.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/evaluation.hpp"
#include "aerolabel/geometry.hpp"

namespace testutil {

struct OracleMapReport {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  double map_75 = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
  double mar_50_95 = 0.0;
  std::map<int, double> per_class_ap;
};

namespace mapdetail {

struct Sample {
  double score = 0.0;
  bool matched = false;
};

struct PerClassEval {
  double ap = -1.0;      // -1 when no eligible ground truth
  double recall = -1.0;
};

inline double pair_iou(const aerolabel::BoundingBox& a,
                       const aerolabel::BoundingBox& b) {
  if (a.area() <= 0.0 && b.area() <= 0.0) return 0.0;
  return aerolabel::iou(a, b);
}

inline PerClassEval evaluate_class(
    const std::vector<aerolabel::Detection>& preds,
    const aerolabel::AnnotatedDataset& gt, int class_id, double iou_threshold,
    double area_lo, double area_hi) {
  // Images in ascending id order, union of both sides.
  std::set<std::int64_t> image_ids;
  for (const auto& im : gt.images) image_ids.insert(im.id);
  for (const auto& p : preds) image_ids.insert(p.image_id);

  std::vector<Sample> samples;
  std::int64_t eligible_gt = 0;
  for (const std::int64_t image_id : image_ids) {
    std::vector<const aerolabel::Detection*> dts;
    for (const auto& p : preds) {
      if (p.image_id == image_id && p.class_id == class_id) dts.push_back(&p);
    }
    std::stable_sort(dts.begin(), dts.end(),
                     [](const aerolabel::Detection* a, const aerolabel::Detection* b) {
                       return a->confidence > b->confidence;
                     });
    if (dts.size() > 100) dts.resize(100);

    std::vector<const aerolabel::Annotation*> gts;
    for (const auto& a : gt.annotations) {
      if (a.image_id == image_id && a.class_id == class_id) gts.push_back(&a);
    }
    std::vector<bool> ignored(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double area = gts[g]->box.area();
      ignored[g] = area < area_lo || area > area_hi;
      if (!ignored[g]) ++eligible_gt;
    }
    // Evaluation order: real ground truth first, ignored afterwards.
    std::vector<std::size_t> order;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!ignored[g]) order.push_back(g);
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (ignored[g]) order.push_back(g);
    }

    std::vector<bool> used(gts.size(), false);
    for (const aerolabel::Detection* d : dts) {
      double best = std::min(iou_threshold, 1.0 - 1e-10);
      std::size_t match = gts.size();
      bool match_ignored = false;
      for (const std::size_t g : order) {
        if (used[g]) continue;
        if (match < gts.size() && !match_ignored && ignored[g]) break;
        const double v = pair_iou(d->box, gts[g]->box);
        if (v < best) continue;
        best = v;
        match = g;
        match_ignored = ignored[g];
      }
      if (match < gts.size()) {
        used[match] = true;
        if (!match_ignored) samples.push_back({d->confidence, true});
        // Detections absorbed by ignored ground truth vanish entirely.
      } else {
        const double area = d->box.area();
        const bool det_ignored = area < area_lo || area > area_hi;
        if (!det_ignored) samples.push_back({d->confidence, false});
      }
    }
  }

  PerClassEval out;
  if (eligible_gt == 0) return out;

  std::stable_sort(samples.begin(), samples.end(),
                   [](const Sample& a, const Sample& b) { return a.score > b.score; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Sample& s : samples) {
    if (s.matched) {
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(eligible_gt));
  }

  double sum = 0.0;
  for (int point = 0; point <= 100; ++point) {
    const double target = point / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      if (recall[i] >= target) best = std::max(best, precision[i]);
    }
    sum += best;
  }
  out.ap = sum / 101.0;
  out.recall = samples.empty() ? 0.0 : recall.back();
  return out;
}

inline double mean_or_zero(const std::vector<double>& values) {
  double sum = 0.0;
  int n = 0;
  for (const double v : values) {
    if (v >= 0.0) {
      sum += v;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

}  // namespace mapdetail

inline OracleMapReport oracle_compute_map(
    const std::vector<aerolabel::Detection>& preds,
    const aerolabel::AnnotatedDataset& gt) {
  std::vector<int> class_ids;
  for (const auto& c : gt.classes) class_ids.push_back(c.id);
  std::sort(class_ids.begin(), class_ids.end());

  const double kAll[2] = {0.0, 1e10};
  const double kSmall[2] = {0.0, 32.0 * 32.0};
  const double kMedium[2] = {32.0 * 32.0, 96.0 * 96.0};
  const double kLarge[2] = {96.0 * 96.0, 1e10};

  OracleMapReport report;
  std::vector<double> all_ap, ap50, ap75, small_ap, medium_ap, large_ap, recalls;
  std::map<int, std::vector<double>> per_class;
  for (int t = 0; t < 10; ++t) {
    const double threshold = 0.5 + 0.05 * t;
    for (const int class_id : class_ids) {
      const auto all =
          mapdetail::evaluate_class(preds, gt, class_id, threshold, kAll[0], kAll[1]);
      all_ap.push_back(all.ap);
      recalls.push_back(all.recall);
      per_class[class_id].push_back(all.ap);
      if (t == 0) ap50.push_back(all.ap);
      if (t == 5) ap75.push_back(all.ap);
      small_ap.push_back(mapdetail::evaluate_class(preds, gt, class_id, threshold,
                                                   kSmall[0], kSmall[1]).ap);
      medium_ap.push_back(mapdetail::evaluate_class(preds, gt, class_id, threshold,
                                                    kMedium[0], kMedium[1]).ap);
      large_ap.push_back(mapdetail::evaluate_class(preds, gt, class_id, threshold,
                                                   kLarge[0], kLarge[1]).ap);
    }
  }
  report.map_50_95 = mapdetail::mean_or_zero(all_ap);
  report.map_50 = mapdetail::mean_or_zero(ap50);
  report.map_75 = mapdetail::mean_or_zero(ap75);
  report.map_small = mapdetail::mean_or_zero(small_ap);
  report.map_medium = mapdetail::mean_or_zero(medium_ap);
  report.map_large = mapdetail::mean_or_zero(large_ap);
  report.mar_50_95 = mapdetail::mean_or_zero(recalls);
  for (const int class_id : class_ids) {
    report.per_class_ap[class_id] = mapdetail::mean_or_zero(per_class[class_id]);
  }
  return report;
}

}  // namespace testutil
