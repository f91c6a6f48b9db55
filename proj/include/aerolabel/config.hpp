#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerolabel/augmentation.hpp"
#include "aerolabel/consensus.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/exif.hpp"
#include "aerolabel/fusion.hpp"
#include "aerolabel/version.hpp"

namespace aerolabel {

enum class DetectorKind { file_backed, color_rule, synthetic };

struct DetectorConfig {
  std::string name;
  DetectorKind kind = DetectorKind::file_backed;
  std::filesystem::path path;          // file_backed: COCO results document
  ColorRuleParams color_params;        // color_rule
  std::filesystem::path images_root;   // color_rule
  int fire_class_id = 1;               // color_rule
  std::filesystem::path ground_truth;  // synthetic: COCO dataset
  NoiseSpec noise;                     // synthetic
};

struct EvalConfig {
  double iou_threshold = 0.5;
  double confidence_threshold = 0.3;
};

/// One structured config file drives every subcommand; command-line flags
/// override individual fields.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::vector<DetectorConfig> detectors;
  FilterConfig filters;
  ConsensusConfig consensus;
  MosaicSpec mosaic;
  PasteConfig paste;  // class_mix resolved from names once classes are known
  std::map<std::string, double> paste_class_mix_by_name;
  EvalConfig evaluation;
  CameraTable camera_table = CameraTable::builtin();
  std::uint64_t config_hash = 0;  // fingerprint of the config file bytes
};

inline std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline OverlapMetric metric_from_string(const std::string& s) {
  if (s == "iou") return OverlapMetric::iou;
  if (s == "giou") return OverlapMetric::giou;
  throw_validation("config: unknown overlap metric '" + s + "'");
}

inline ClassMode class_mode_from_string(const std::string& s) {
  if (s == "same_class") return ClassMode::same_class;
  if (s == "all_classes") return ClassMode::all_classes;
  throw_validation("config: unknown class_mode '" + s + "'");
}

inline MosaicVariant variant_from_string(const std::string& s) {
  if (s == "square") return MosaicVariant::square;
  if (s == "double_width") return MosaicVariant::double_width;
  if (s == "double_height") return MosaicVariant::double_height;
  throw_validation("config: unknown mosaic variant '" + s + "'");
}

inline FilterStage filter_stage_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "small_bb") {
    return SmallBbStage{j.value("min_width", 0.0), j.value("min_height", 0.0)};
  }
  if (type == "merge_bb") {
    return MergeBbStage{metric_from_string(j.value("metric", "iou")),
                        j.value("threshold", 0.3),
                        class_mode_from_string(j.value("class_mode", "same_class"))};
  }
  if (type == "mask_bb") {
    MaskBbStage stage;
    stage.expand_factor = j.value("expand_factor", 1.5);
    if (j.contains("grid")) {
      stage.grid_rows = j.at("grid").at(0).get<int>();
      stage.grid_cols = j.at("grid").at(1).get<int>();
    }
    return stage;
  }
  if (type == "vote") {
    return VoteStage{j.value("min_votes", 3), j.value("iou_threshold", 0.5)};
  }
  throw_validation("config: unknown filter stage type '" + type + "'");
}

inline DetectorConfig detector_from_json(const nlohmann::json& j) {
  DetectorConfig d;
  d.name = j.at("name").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "file_backed") {
    d.kind = DetectorKind::file_backed;
    d.path = j.at("path").get<std::string>();
  } else if (kind == "color_rule") {
    d.kind = DetectorKind::color_rule;
    d.images_root = j.value("images_root", std::string("."));
    d.fire_class_id = j.value("fire_class", 1);
    if (j.contains("params")) {
      const auto& p = j.at("params");
      d.color_params.r_threshold = p.value("r_threshold", 190.0);
      d.color_params.saturation_threshold = p.value("saturation_threshold", 0.2);
      d.color_params.min_area_px = p.value("min_area_px", 30);
    }
  } else if (kind == "synthetic") {
    d.kind = DetectorKind::synthetic;
    d.ground_truth = j.at("ground_truth").get<std::string>();
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      d.noise.box_jitter_sigma = n.value("box_jitter_sigma", 0.0);
      d.noise.miss_probability = n.value("miss_probability", 0.0);
      d.noise.false_positives_per_image = n.value("false_positives_per_image", 0.0);
      d.noise.class_confusion_probability =
          n.value("class_confusion_probability", 0.0);
    }
  } else {
    throw_validation("config: unknown detector kind '" + kind + "'");
  }
  return d;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text,
                                  const std::filesystem::path& base_dir = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw_validation("config: " + std::string(e.what()));
  }
  RunConfig cfg;
  cfg.config_hash = fnv1a_hash(text);
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
  cfg.workers = doc.value("workers", 1);
  if (cfg.workers < 1) throw_validation("config: workers must be >= 1");

  auto resolve = [&](std::filesystem::path p) {
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };

  for (const auto& j : doc.value("detectors", nlohmann::json::array())) {
    DetectorConfig d = detail::detector_from_json(j);
    d.path = resolve(d.path);
    d.images_root = resolve(d.images_root);
    d.ground_truth = resolve(d.ground_truth);
    cfg.detectors.push_back(std::move(d));
  }
  for (const auto& j : doc.value("filters", nlohmann::json::array())) {
    cfg.filters.stages.push_back(detail::filter_stage_from_json(j));
  }
  validate_filter_config(cfg.filters);

  if (doc.contains("consensus")) {
    const auto& c = doc.at("consensus");
    cfg.consensus.confidence_min = c.value("confidence_min", 0.5);
    cfg.consensus.iou_min = c.value("iou_min", 0.5);
    cfg.consensus.min_models = c.value("min_models", 2);
    validate_consensus_config(cfg.consensus);
  }
  if (doc.contains("mosaic")) {
    const auto& m = doc.at("mosaic");
    cfg.mosaic.variant = detail::variant_from_string(m.value("variant", "square"));
    cfg.mosaic.target_side = m.value("target_side", 900);
    cfg.mosaic.grid_k = m.value("grid_k", 3);
  }
  if (doc.contains("paste")) {
    const auto& p = doc.at("paste");
    if (p.contains("objects_per_image")) {
      cfg.paste.min_objects_per_image = p.at("objects_per_image").at(0).get<int>();
      cfg.paste.max_objects_per_image = p.at("objects_per_image").at(1).get<int>();
    }
    cfg.paste.margin_px = p.value("margin_px", 0);
    cfg.paste.blend_strength = p.value("blend_strength", 0.5);
    if (p.contains("class_mix")) {
      for (const auto& [name, weight] : p.at("class_mix").items()) {
        cfg.paste_class_mix_by_name[name] = weight.get<double>();
      }
    }
  }
  if (doc.contains("evaluation")) {
    const auto& e = doc.at("evaluation");
    cfg.evaluation.iou_threshold = e.value("iou_threshold", 0.5);
    cfg.evaluation.confidence_threshold = e.value("confidence_threshold", 0.3);
  }
  if (doc.contains("camera_table")) {
    const auto& t = doc.at("camera_table");
    if (t.is_string()) {
      cfg.camera_table = CameraTable::load(resolve(t.get<std::string>()));
    } else {
      for (const auto& [model, width] : t.items()) {
        cfg.camera_table.sensor_width_mm_by_model[model] = width.get<double>();
      }
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("config: cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  return parse_run_config(text, path.parent_path());
}

/// Resolve the name-keyed paste mix against a class catalog.
inline std::map<int, double> resolve_class_mix(
    const std::map<std::string, double>& by_name,
    const std::vector<ClassLabel>& classes) {
  std::map<int, double> out;
  for (const auto& [name, weight] : by_name) {
    const ClassLabel* found = nullptr;
    for (const auto& c : classes) {
      if (c.name == name) found = &c;
    }
    if (!found) throw_validation("config: class_mix names unknown class '" + name + "'");
    out[found->id] = weight;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Every run records how it was produced: config fingerprint, seed, version,
/// and the per-stage counts that the output files must add up to.
struct Manifest {
  std::string subcommand;
  std::uint64_t config_hash = 0;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::vector<StageCount> stage_counts;
  std::map<std::string, std::int64_t> counts;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
};

inline std::string serialize_manifest(const Manifest& m) {
  nlohmann::json doc;
  doc["tool"] = kToolName;
  doc["version"] = kToolVersion;
  doc["subcommand"] = m.subcommand;
  doc["config_hash"] = m.config_hash;
  if (m.seed) doc["seed"] = *m.seed;
  doc["workers"] = m.workers;
  doc["stage_counts"] = nlohmann::json::array();
  for (const auto& s : m.stage_counts) {
    doc["stage_counts"].push_back(
        {{"stage", s.stage}, {"boxes_in", s.boxes_in}, {"boxes_out", s.boxes_out}});
  }
  doc["counts"] = nlohmann::json::object();
  for (const auto& [key, value] : m.counts) doc["counts"][key] = value;
  doc["outputs"] = m.outputs;
  doc["warnings"] = m.warnings;
  return doc.dump(2) + "\n";
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("manifest: cannot write " + path.string());
  out << serialize_manifest(m);
}

}  // namespace aerolabel
