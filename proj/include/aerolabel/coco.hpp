#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerolabel/annotations.hpp"
#include "aerolabel/errors.hpp"

namespace aerolabel {

// COCO document layout: top-level "images" (id, file_name, width, height),
// "annotations" (id, image_id, category_id, bbox [x,y,w,h], optional score),
// "categories" (id, name). Detector results use the flat-array convention.

inline BoundingBox box_from_coco(double x, double y, double w, double h) {
  return {x, y, x + w, y + h};
}

inline std::array<double, 4> box_to_coco(const BoundingBox& b) {
  return {b.x_min, b.y_min, b.width(), b.height()};
}

namespace detail {

inline nlohmann::json parse_json_or_throw(const std::string& text,
                                          const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw_processing(std::string(what) + ": " + e.what());
  }
}

inline void warn(std::vector<std::string>* warnings, std::string msg) {
  if (warnings) warnings->push_back(std::move(msg));
}

inline std::optional<FlightMeta> flight_meta_from_json(
    const nlohmann::json& j) {
  if (!j.contains("flight_meta")) return std::nullopt;
  const auto& fm = j.at("flight_meta");
  FlightMeta meta{fm.at("altitude_m").get<double>(),
                  fm.at("focal_length_mm").get<double>(),
                  fm.at("sensor_width_mm").get<double>()};
  return meta;
}

}  // namespace detail

/// Parse a COCO annotation document. COCO (x,y,w,h) boxes are converted to
/// corner form. Unknown top-level or entry keys are dropped with a warning
/// record when a sink is supplied. Referential problems name the offending
/// annotation.
inline AnnotatedDataset parse_coco(const std::string& text,
                                   std::vector<std::string>* warnings = nullptr) {
  const nlohmann::json doc = detail::parse_json_or_throw(text, "coco parse");
  if (!doc.is_object()) throw_processing("coco parse: document is not an object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "images" && key != "annotations" && key != "categories" &&
        key != "info" && key != "licenses") {
      detail::warn(warnings, "coco parse: dropped unknown top-level key '" + key + "'");
    }
  }

  AnnotatedDataset ds;
  static const std::unordered_set<std::string> known_image_keys{
      "id", "file_name", "width", "height", "flight_meta", "license",
      "date_captured", "coco_url", "flickr_url"};
  for (const auto& j : doc.value("images", nlohmann::json::array())) {
    ImageRecord im;
    im.id = j.at("id").get<std::int64_t>();
    im.file_name = j.at("file_name").get<std::string>();
    im.width = j.at("width").get<int>();
    im.height = j.at("height").get<int>();
    im.flight_meta = detail::flight_meta_from_json(j);
    for (const auto& [key, value] : j.items()) {
      if (!known_image_keys.count(key)) {
        detail::warn(warnings, "coco parse: image " + std::to_string(im.id) +
                                   ": dropped unknown key '" + key + "'");
      }
    }
    ds.images.push_back(std::move(im));
  }

  for (const auto& j : doc.value("categories", nlohmann::json::array())) {
    ds.classes.push_back({j.at("id").get<int>(), j.at("name").get<std::string>()});
  }

  static const std::unordered_set<std::string> known_ann_keys{
      "id", "image_id", "category_id", "bbox", "score", "source", "area",
      "iscrowd", "segmentation"};
  for (const auto& j : doc.value("annotations", nlohmann::json::array())) {
    Annotation a;
    a.image_id = j.at("image_id").get<std::int64_t>();
    a.class_id = j.at("category_id").get<int>();
    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw_processing("coco parse: annotation " +
                       std::to_string(j.value("id", -1)) +
                       ": bbox must be [x,y,w,h]");
    }
    a.box = box_from_coco(bbox[0].get<double>(), bbox[1].get<double>(),
                          bbox[2].get<double>(), bbox[3].get<double>());
    if (j.contains("score")) a.confidence = j.at("score").get<double>();
    if (j.contains("source")) a.source = j.at("source").get<std::string>();
    for (const auto& [key, value] : j.items()) {
      if (!known_ann_keys.count(key)) {
        detail::warn(warnings, "coco parse: annotation " +
                                   std::to_string(j.value("id", -1)) +
                                   ": dropped unknown key '" + key + "'");
      }
    }
    ds.annotations.push_back(std::move(a));
  }

  // Referential integrity, reported with the annotation id from the file.
  std::unordered_set<std::int64_t> image_ids;
  for (const auto& im : ds.images) image_ids.insert(im.id);
  std::unordered_set<int> class_ids;
  for (const auto& c : ds.classes) class_ids.insert(c.id);
  std::size_t index = 0;
  for (const auto& j : doc.value("annotations", nlohmann::json::array())) {
    const Annotation& a = ds.annotations[index++];
    const std::int64_t ann_id = j.value("id", static_cast<std::int64_t>(index));
    if (!image_ids.count(a.image_id)) {
      throw_processing("coco parse: annotation " + std::to_string(ann_id) +
                       " references missing image id " +
                       std::to_string(a.image_id));
    }
    if (!class_ids.count(a.class_id)) {
      throw_processing("coco parse: annotation " + std::to_string(ann_id) +
                       " references missing category id " +
                       std::to_string(a.class_id));
    }
  }
  return ds;
}

/// Serialize with deterministic ordering: images and categories sorted by id,
/// annotations written in list order with sequential ids. Datasets whose
/// lists are already id-sorted round-trip to structural equality.
inline std::string serialize_coco(const AnnotatedDataset& ds) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  doc["categories"] = nlohmann::json::array();

  std::vector<const ImageRecord*> images;
  images.reserve(ds.images.size());
  for (const auto& im : ds.images) images.push_back(&im);
  std::sort(images.begin(), images.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });
  for (const ImageRecord* im : images) {
    nlohmann::json j{{"id", im->id},
                     {"file_name", im->file_name},
                     {"width", im->width},
                     {"height", im->height}};
    if (im->flight_meta) {
      j["flight_meta"] = {{"altitude_m", im->flight_meta->altitude_m},
                          {"focal_length_mm", im->flight_meta->focal_length_mm},
                          {"sensor_width_mm", im->flight_meta->sensor_width_mm}};
    }
    doc["images"].push_back(std::move(j));
  }

  std::vector<const ClassLabel*> classes;
  classes.reserve(ds.classes.size());
  for (const auto& c : ds.classes) classes.push_back(&c);
  std::sort(classes.begin(), classes.end(),
            [](const ClassLabel* a, const ClassLabel* b) { return a->id < b->id; });
  for (const ClassLabel* c : classes) {
    doc["categories"].push_back({{"id", c->id}, {"name", c->name}});
  }

  std::int64_t next_id = 1;
  for (const auto& a : ds.annotations) {
    const auto bbox = box_to_coco(a.box);
    nlohmann::json j{{"id", next_id++},
                     {"image_id", a.image_id},
                     {"category_id", a.class_id},
                     {"bbox", {bbox[0], bbox[1], bbox[2], bbox[3]}},
                     {"area", bbox[2] * bbox[3]},
                     {"iscrowd", 0}};
    if (a.confidence) j["score"] = *a.confidence;
    if (a.source) j["source"] = *a.source;
    doc["annotations"].push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

/// Parse the flat COCO results convention: an array of
/// {image_id, category_id, bbox, score}. Scores must land in [0,1].
inline std::vector<Annotation> parse_coco_results(
    const std::string& text) {
  const nlohmann::json doc = detail::parse_json_or_throw(text, "coco results parse");
  if (!doc.is_array()) {
    throw_processing("coco results parse: document is not an array");
  }
  std::vector<Annotation> out;
  out.reserve(doc.size());
  for (const auto& j : doc) {
    Annotation a;
    a.image_id = j.at("image_id").get<std::int64_t>();
    a.class_id = j.at("category_id").get<int>();
    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw_processing("coco results parse: bbox must be [x,y,w,h]");
    }
    a.box = box_from_coco(bbox[0].get<double>(), bbox[1].get<double>(),
                          bbox[2].get<double>(), bbox[3].get<double>());
    const double score = j.at("score").get<double>();
    if (score < 0.0 || score > 1.0) {
      throw_processing("coco results parse: score " + std::to_string(score) +
                       " outside [0,1]");
    }
    a.confidence = score;
    if (j.contains("source")) a.source = j.at("source").get<std::string>();
    out.push_back(std::move(a));
  }
  return out;
}

inline std::string serialize_coco_results(const std::vector<Annotation>& results) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& a : results) {
    const auto bbox = box_to_coco(a.box);
    nlohmann::json j{{"image_id", a.image_id},
                     {"category_id", a.class_id},
                     {"bbox", {bbox[0], bbox[1], bbox[2], bbox[3]}},
                     {"score", a.confidence.value_or(1.0)}};
    if (a.source) j["source"] = *a.source;
    doc.push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

}  // namespace aerolabel
