#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"
#include "aerolabel/rng.hpp"

namespace aerolabel {

struct ClassLabel {
  int id = 0;
  std::string name;

  bool operator==(const ClassLabel&) const = default;
};

/// Flight metadata carried through from EXIF at ingest; the GSD formula
/// needs all three fields.
struct FlightMeta {
  double altitude_m = 0.0;
  double focal_length_mm = 0.0;
  double sensor_width_mm = 0.0;

  bool valid() const {
    return altitude_m > 0.0 && std::isfinite(altitude_m) &&
           focal_length_mm > 0.0 && std::isfinite(focal_length_mm) &&
           sensor_width_mm > 0.0 && std::isfinite(sensor_width_mm);
  }
  bool operator==(const FlightMeta&) const = default;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::optional<FlightMeta> flight_meta;

  BoundingBox bounds() const {
    return {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)};
  }
  bool operator==(const ImageRecord&) const = default;
};

/// Ground truth and predictions share one record type; predictions carry a
/// confidence, ground truth does not.
struct Annotation {
  std::int64_t image_id = 0;
  BoundingBox box;
  int class_id = 0;
  std::optional<double> confidence;
  std::optional<std::string> source;

  bool operator==(const Annotation&) const = default;
};

struct AnnotatedDataset {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<ClassLabel> classes;

  bool operator==(const AnnotatedDataset&) const = default;

  const ImageRecord* find_image(std::int64_t id) const {
    for (const auto& im : images) {
      if (im.id == id) return &im;
    }
    return nullptr;
  }
  const ClassLabel* find_class(int id) const {
    for (const auto& c : classes) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }
  const ClassLabel* find_class(const std::string& name) const {
    for (const auto& c : classes) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

/// Referential and uniqueness checks behind the AnnotatedDataset invariants.
/// Throws a processing error naming the first offending record.
inline void validate_dataset(const AnnotatedDataset& ds) {
  std::unordered_set<std::int64_t> image_ids;
  for (const auto& im : ds.images) {
    if (im.width <= 0 || im.height <= 0) {
      throw_processing("dataset: image " + std::to_string(im.id) +
                       " has non-positive dimensions");
    }
    if (!image_ids.insert(im.id).second) {
      throw_processing("dataset: duplicate image id " + std::to_string(im.id));
    }
  }
  std::unordered_set<int> class_ids;
  for (const auto& c : ds.classes) {
    if (c.name.empty()) throw_processing("dataset: class with empty name");
    if (!class_ids.insert(c.id).second) {
      throw_processing("dataset: duplicate class id " + std::to_string(c.id));
    }
  }
  for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
    const Annotation& a = ds.annotations[i];
    if (!image_ids.count(a.image_id)) {
      throw_processing("dataset: annotation " + std::to_string(i) +
                       " references missing image id " +
                       std::to_string(a.image_id));
    }
    if (!class_ids.count(a.class_id)) {
      throw_processing("dataset: annotation " + std::to_string(i) +
                       " references missing class id " +
                       std::to_string(a.class_id));
    }
    if (!is_valid_box(a.box)) {
      throw_processing("dataset: annotation " + std::to_string(i) +
                       " has an invalid box");
    }
    if (a.confidence && (*a.confidence < 0.0 || *a.confidence > 1.0)) {
      throw_processing("dataset: annotation " + std::to_string(i) +
                       " has confidence outside [0,1]");
    }
  }
}

/// Image-level split: no image lands in both halves, train gets
/// round(train_fraction * N) images (ties round up, toward training), and the
/// partition is a pure function of the seed.
inline std::pair<AnnotatedDataset, AnnotatedDataset> split_dataset(
    const AnnotatedDataset& ds, double train_fraction, std::uint64_t seed) {
  if (ds.images.size() < 2) {
    throw_validation("split_dataset: need at least 2 images");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw_validation("split_dataset: train_fraction must be in (0,1)");
  }
  const std::size_t n = ds.images.size();
  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n) + 0.5));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = make_rng(seed);
  shuffle(order, rng);

  std::unordered_set<std::int64_t> train_ids;
  for (std::size_t i = 0; i < n_train; ++i) {
    train_ids.insert(ds.images[order[i]].id);
  }

  AnnotatedDataset train, eval;
  train.classes = ds.classes;
  eval.classes = ds.classes;
  for (const auto& im : ds.images) {
    (train_ids.count(im.id) ? train : eval).images.push_back(im);
  }
  for (const auto& a : ds.annotations) {
    (train_ids.count(a.image_id) ? train : eval).annotations.push_back(a);
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace aerolabel
