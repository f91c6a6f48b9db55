#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"

namespace aerolabel {

struct ConsensusConfig {
  double confidence_min = 0.5;
  double iou_min = 0.5;
  int min_models = 2;
};

inline void validate_consensus_config(const ConsensusConfig& cfg) {
  if (cfg.confidence_min < 0.0 || cfg.confidence_min > 1.0 ||
      cfg.iou_min < 0.0 || cfg.iou_min > 1.0) {
    throw_validation("consensus: thresholds must be in [0,1]");
  }
  if (cfg.min_models < 1) throw_validation("consensus: min_models must be >= 1");
}

namespace detail {

struct ConsensusCandidate {
  const Detection* det = nullptr;
  std::size_t model = 0;
  std::size_t order = 0;  // tie-break of last resort
};

/// Deterministic candidate ordering; box coordinates break confidence ties
/// so the result does not depend on model names.
inline bool candidate_before(const ConsensusCandidate& a,
                             const ConsensusCandidate& b) {
  if (a.det->confidence != b.det->confidence) {
    return a.det->confidence > b.det->confidence;
  }
  const auto key = [](const ConsensusCandidate& c) {
    return std::tuple(c.det->box.x_min, c.det->box.y_min, c.det->box.x_max,
                      c.det->box.y_max);
  };
  if (key(a) != key(b)) return key(a) < key(b);
  return a.order < b.order;
}

}  // namespace detail

/// Build a labeled dataset from the boxes several models agree on: drop
/// predictions under confidence_min, group per image and class around the
/// highest-confidence unassigned seed (one prediction per distinct model,
/// each at IoU >= iou_min with the seed), and emit the seed's box verbatim
/// for every group that collected at least min_models distinct models.
/// Consensus annotations carry no confidence: they become ground truth.
inline AnnotatedDataset build_consensus(
    const std::map<std::string, std::vector<Detection>>& per_model,
    const std::vector<ImageRecord>& images,
    const std::vector<ClassLabel>& classes, const ConsensusConfig& cfg) {
  validate_consensus_config(cfg);
  if (static_cast<int>(per_model.size()) < cfg.min_models) {
    throw_validation("consensus: " + std::to_string(per_model.size()) +
                     " model(s) supplied but min_models is " +
                     std::to_string(cfg.min_models));
  }
  std::set<std::int64_t> image_ids;
  for (const ImageRecord& im : images) image_ids.insert(im.id);

  // Confident candidates keyed by (image, class).
  std::map<std::pair<std::int64_t, int>, std::vector<detail::ConsensusCandidate>>
      groups;
  std::size_t model_index = 0;
  std::size_t order = 0;
  for (const auto& [model, dets] : per_model) {
    for (const Detection& d : dets) {
      if (!image_ids.count(d.image_id)) {
        throw_processing("consensus: model '" + model +
                         "' references unknown image id " +
                         std::to_string(d.image_id));
      }
      if (d.confidence < cfg.confidence_min) continue;
      groups[{d.image_id, d.class_id}].push_back({&d, model_index, order++});
    }
    ++model_index;
  }

  AnnotatedDataset out;
  out.images = images;
  out.classes = classes;
  for (auto& [key, candidates] : groups) {
    std::sort(candidates.begin(), candidates.end(), detail::candidate_before);
    std::vector<bool> assigned(candidates.size(), false);
    for (std::size_t s = 0; s < candidates.size(); ++s) {
      if (assigned[s]) continue;
      assigned[s] = true;
      const Detection& seed = *candidates[s].det;
      std::set<std::size_t> models{candidates[s].model};
      // Highest-confidence agreeing candidate per other model.
      for (std::size_t i = s + 1; i < candidates.size(); ++i) {
        if (assigned[i] || models.count(candidates[i].model)) continue;
        const Detection& d = *candidates[i].det;
        if (seed.box.area() <= 0.0 && d.box.area() <= 0.0) continue;
        if (iou(seed.box, d.box) < cfg.iou_min) continue;
        assigned[i] = true;
        models.insert(candidates[i].model);
      }
      if (static_cast<int>(models.size()) >= cfg.min_models) {
        Annotation a;
        a.image_id = key.first;
        a.class_id = key.second;
        a.box = seed.box;
        out.annotations.push_back(std::move(a));
      }
    }
  }
  return out;
}

}  // namespace aerolabel
