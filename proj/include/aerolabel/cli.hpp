#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aerolabel/annotations.hpp"
#include "aerolabel/augmentation.hpp"
#include "aerolabel/coco.hpp"
#include "aerolabel/config.hpp"
#include "aerolabel/consensus.hpp"
#include "aerolabel/detectors.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/evaluation.hpp"
#include "aerolabel/exif.hpp"
#include "aerolabel/fusion.hpp"
#include "aerolabel/version.hpp"
#include "aerolabel/yolo.hpp"

namespace aerolabel::cli {

// Exit codes: 0 success, 2 config/usage, 3 I/O, 4 processing.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitProcessing = 4;

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path,
                                  const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io(std::string(what) + ": cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot write " + path.string());
  out << text;
}

inline AnnotatedDataset load_dataset(const std::filesystem::path& path) {
  const AnnotatedDataset ds = parse_coco(read_text_file(path, "dataset"));
  validate_dataset(ds);
  return ds;
}

/// Predictions arrive either as a COCO results array or as a full COCO
/// document whose annotations carry scores.
inline std::vector<Detection> load_predictions(const std::filesystem::path& path,
                                               const std::string& source) {
  const std::string text = read_text_file(path, "predictions");
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  std::vector<Annotation> annotations;
  if (i < text.size() && text[i] == '[') {
    annotations = parse_coco_results(text);
  } else {
    annotations = parse_coco(text).annotations;
  }
  std::vector<Detection> out;
  out.reserve(annotations.size());
  for (const Annotation& a : annotations) {
    if (!a.confidence) {
      throw_processing("predictions: annotation without score in " + path.string());
    }
    out.push_back(to_detection(a, source));
  }
  return out;
}

/// "name=path" or bare path (the file stem names the model).
inline std::pair<std::string, std::filesystem::path> parse_named_path(
    const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) {
    const std::filesystem::path p(arg);
    return {p.stem().string(), p};
  }
  return {arg.substr(0, eq), std::filesystem::path(arg.substr(eq + 1))};
}

inline std::uint64_t require_seed(const RunConfig& cfg,
                                  const std::optional<std::uint64_t>& flag,
                                  const char* subcommand) {
  if (flag) return *flag;
  if (cfg.seed) return *cfg.seed;
  throw_validation(std::string(subcommand) +
                   ": a seed is required (--seed or config \"seed\") so the "
                   "run can be replayed");
}

inline std::map<int, std::string> class_names(const std::vector<ClassLabel>& classes) {
  std::map<int, std::string> names;
  for (const auto& c : classes) names[c.id] = c.name;
  return names;
}

/// Object library layout: <class_name>/<object>.png (RGBA) plus a sidecar
/// <object>.json carrying {"max_width_m": ...}.
inline std::vector<PasteObject> load_object_library(
    const std::filesystem::path& dir, const std::vector<ClassLabel>& classes) {
  if (!std::filesystem::is_directory(dir)) {
    throw_io("object library: no such directory: " + dir.string());
  }
  std::vector<PasteObject> objects;
  for (const auto& c : classes) {
    const auto class_dir = dir / c.name;
    if (!std::filesystem::is_directory(class_dir)) continue;
    std::vector<std::filesystem::path> pngs;
    for (const auto& entry : std::filesystem::directory_iterator(class_dir)) {
      if (entry.path().extension() == ".png") pngs.push_back(entry.path());
    }
    std::sort(pngs.begin(), pngs.end());
    for (const auto& png : pngs) {
      Raster raster = load_image(png);
      if (raster.channels != 4) {
        throw_processing("object library: " + png.string() + " must be RGBA");
      }
      auto sidecar = png;
      sidecar.replace_extension(".json");
      double max_width_m = 0.0;
      if (std::filesystem::exists(sidecar)) {
        try {
          const auto meta = nlohmann::json::parse(read_text_file(sidecar, "object"));
          max_width_m = meta.value("max_width_m", 0.0);
        } catch (const nlohmann::json::exception& e) {
          throw_processing("object library: " + sidecar.string() + ": " + e.what());
        }
      }
      if (max_width_m <= 0.0) {
        throw_processing("object library: " + png.string() +
                         " needs a sidecar with a positive max_width_m");
      }
      objects.push_back({make_masked_crop(std::move(raster)), c.id, max_width_m});
    }
  }
  if (objects.empty()) {
    throw_processing("object library: no objects found under " + dir.string());
  }
  return objects;
}

/// False-positive crops layout: <class_name>/*.png (RGB), as written by fpfn.
inline std::map<int, std::vector<FpCrop>> load_fp_crops(
    const std::filesystem::path& dir, const std::vector<ClassLabel>& classes) {
  if (!std::filesystem::is_directory(dir)) {
    throw_io("fp crops: no such directory: " + dir.string());
  }
  std::map<int, std::vector<FpCrop>> by_class;
  for (const auto& c : classes) {
    const auto class_dir = dir / c.name;
    if (!std::filesystem::is_directory(class_dir)) continue;
    std::vector<std::filesystem::path> pngs;
    for (const auto& entry : std::filesystem::directory_iterator(class_dir)) {
      const auto ext = entry.path().extension();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") pngs.push_back(entry.path());
    }
    std::sort(pngs.begin(), pngs.end());
    std::int64_t index = 0;
    for (const auto& png : pngs) {
      Raster raster = load_image(png);
      if (raster.channels == 4) {
        // Crops are plain rectangles; drop any alpha channel.
        Raster rgb = Raster::filled(raster.width, raster.height, 3, 0);
        for (int y = 0; y < raster.height; ++y) {
          for (int x = 0; x < raster.width; ++x) {
            const std::uint8_t* s = raster.pixel(x, y);
            std::uint8_t* d = rgb.pixel(x, y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
          }
        }
        raster = std::move(rgb);
      }
      by_class[c.id].push_back({std::move(raster), c.id, index++});
    }
  }
  if (by_class.empty()) {
    throw_processing("fp crops: no crops found under " + dir.string());
  }
  return by_class;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// label a dataset with the detector stack + filter chain
// ---------------------------------------------------------------------------

struct LabelOptions {
  std::filesystem::path config;
  std::filesystem::path images;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

inline int cmd_label(const LabelOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (cfg.detectors.empty()) {
    throw_validation("label: config declares no detectors");
  }
  const AnnotatedDataset images = detail::load_dataset(opt.images);
  const int workers = opt.workers.value_or(cfg.workers);

  bool needs_seed = false;
  for (const auto& d : cfg.detectors) {
    if (d.kind == DetectorKind::synthetic) needs_seed = true;
  }
  std::uint64_t seed = 0;
  if (needs_seed) seed = detail::require_seed(cfg, opt.seed, "label");

  std::vector<std::unique_ptr<Detector>> detectors;
  for (const auto& d : cfg.detectors) {
    switch (d.kind) {
      case DetectorKind::file_backed:
        detectors.push_back(std::make_unique<FilePredictionsDetector>(
            FilePredictionsDetector::from_file(d.name, d.path)));
        break;
      case DetectorKind::color_rule:
        detectors.push_back(std::make_unique<ColorRuleFireDetector>(
            d.name, d.color_params, d.images_root, d.fire_class_id));
        break;
      case DetectorKind::synthetic: {
        AnnotatedDataset gt = detail::load_dataset(d.ground_truth);
        detectors.push_back(std::make_unique<SyntheticDetector>(
            d.name, std::move(gt), d.noise, mix_seed(seed, fnv1a_hash(d.name))));
        break;
      }
    }
  }
  std::vector<const Detector*> detector_ptrs;
  for (const auto& d : detectors) detector_ptrs.push_back(d.get());

  const DetectionRunResult run =
      run_detection_manager(images.images, detector_ptrs, workers);
  const FilterChainResult filtered =
      run_filter_chain(run.detections, cfg.filters, images.images);

  AnnotatedDataset proposals;
  proposals.images = images.images;
  proposals.classes = images.classes;
  for (const Detection& d : filtered.detections) {
    proposals.annotations.push_back(to_annotation(d));
  }
  detail::write_text_file(opt.out, serialize_coco(proposals));

  Manifest manifest;
  manifest.subcommand = "label";
  manifest.config_hash = cfg.config_hash;
  if (needs_seed) manifest.seed = seed;
  manifest.workers = workers;
  manifest.stage_counts = filtered.counts;
  manifest.counts["images"] = static_cast<std::int64_t>(images.images.size());
  manifest.counts["detectors"] = static_cast<std::int64_t>(detectors.size());
  manifest.counts["detections_raw"] = static_cast<std::int64_t>(run.detections.size());
  manifest.counts["detections_out"] =
      static_cast<std::int64_t>(filtered.detections.size());
  manifest.counts["detector_failures"] = static_cast<std::int64_t>(run.failures.size());
  manifest.outputs.push_back(opt.out.string());
  for (const auto& f : run.failures) {
    manifest.warnings.push_back("detector " + f.detector + " failed on image " +
                                std::to_string(f.image_id) + ": " + f.message);
  }
  write_manifest(manifest, opt.out.string() + ".manifest.json");

  std::cout << "label: " << images.images.size() << " images, "
            << run.detections.size() << " raw detections -> "
            << filtered.detections.size() << " proposals\n";
  for (const auto& s : filtered.counts) {
    std::cout << "  " << s.stage << ": " << s.boxes_in << " -> " << s.boxes_out
              << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fpfn extraction
// ---------------------------------------------------------------------------

struct FpFnOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> predictions;  // name=path
  std::filesystem::path ground_truth;
  std::filesystem::path out_dir;
  std::optional<double> confidence;
  std::optional<std::filesystem::path> images_root;
};

inline int cmd_fpfn(const FpFnOptions& opt) {
  RunConfig cfg = opt.config ? load_run_config(*opt.config) : RunConfig{};
  const double confidence =
      opt.confidence.value_or(cfg.evaluation.confidence_threshold);
  const AnnotatedDataset gt = detail::load_dataset(opt.ground_truth);

  std::vector<Detection> preds;
  for (const std::string& arg : opt.predictions) {
    const auto [name, path] = detail::parse_named_path(arg);
    for (Detection& d : detail::load_predictions(path, name)) {
      preds.push_back(std::move(d));
    }
  }

  const auto [fps, fns] = extract_fp_fn(preds, gt.annotations, confidence, &gt.images);

  std::vector<Annotation> fp_annotations;
  for (const Detection& d : fps) fp_annotations.push_back(to_annotation(d));
  detail::write_text_file(opt.out_dir / "fps.json",
                          serialize_coco_results(fp_annotations));
  AnnotatedDataset fn_ds;
  fn_ds.images = gt.images;
  fn_ds.classes = gt.classes;
  fn_ds.annotations = fns;
  detail::write_text_file(opt.out_dir / "fns.json", serialize_coco(fn_ds));

  const auto names = detail::class_names(gt.classes);
  std::map<int, std::int64_t> fp_by_class, fn_by_class;
  for (const auto& d : fps) fp_by_class[d.class_id]++;
  for (const auto& a : fns) fn_by_class[a.class_id]++;
  std::ostringstream report;
  report << "FP/FN report (confidence >= " << confidence << ", zero-IoU FN rule)\n";
  report << "FP total: " << fps.size() << "\n";
  for (const auto& [class_id, count] : fp_by_class) {
    report << "  " << names.at(class_id) << ": " << count << "\n";
  }
  report << "FN total: " << fns.size() << "\n";
  for (const auto& [class_id, count] : fn_by_class) {
    report << "  " << names.at(class_id) << ": " << count << "\n";
  }
  detail::write_text_file(opt.out_dir / "report.txt", report.str());

  Manifest manifest;
  manifest.subcommand = "fpfn";
  manifest.config_hash = cfg.config_hash;
  manifest.counts["predictions"] = static_cast<std::int64_t>(preds.size());
  manifest.counts["fps"] = static_cast<std::int64_t>(fps.size());
  manifest.counts["fns"] = static_cast<std::int64_t>(fns.size());
  manifest.outputs = {(opt.out_dir / "fps.json").string(),
                      (opt.out_dir / "fns.json").string(),
                      (opt.out_dir / "report.txt").string()};

  // With the source imagery available, cut the crops that feed the mosaic
  // generator, grouped by the class the detector (wrongly) predicted.
  if (opt.images_root) {
    std::map<std::int64_t, const ImageRecord*> by_id;
    for (const auto& im : gt.images) by_id[im.id] = &im;
    std::int64_t fp_index = 0, fn_index = 0;
    auto cut = [&](std::int64_t image_id, BoundingBox box, int class_id,
                   const char* prefix, std::int64_t& index) {
      const ImageRecord* im = by_id.at(image_id);
      const Raster raster = load_image(*opt.images_root / im->file_name);
      box.x_min = std::max(box.x_min, 0.0);
      box.y_min = std::max(box.y_min, 0.0);
      box.x_max = std::min(box.x_max, static_cast<double>(raster.width));
      box.y_max = std::min(box.y_max, static_cast<double>(raster.height));
      if (box.width() < 1.0 || box.height() < 1.0) {
        manifest.warnings.push_back(std::string(prefix) + " crop out of bounds on image " +
                                    std::to_string(image_id));
        return;
      }
      const auto dir =
          opt.out_dir / (std::string(prefix) + "_crops") / names.at(class_id);
      char name[32];
      std::snprintf(name, sizeof(name), "%s_%05lld.png", prefix,
                    static_cast<long long>(index++));
      save_image(crop(raster, box), dir / name);
    };
    for (const auto& d : fps) cut(d.image_id, d.box, d.class_id, "fp", fp_index);
    for (const auto& a : fns) cut(a.image_id, a.box, a.class_id, "fn", fn_index);
    manifest.counts["fp_crops"] = fp_index;
    manifest.counts["fn_crops"] = fn_index;
  }
  write_manifest(manifest, (opt.out_dir / "fpfn.manifest.json"));

  std::cout << "fpfn: " << fps.size() << " FPs, " << fns.size() << " FNs\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// mosaic generation
// ---------------------------------------------------------------------------

struct MosaicOptions {
  std::filesystem::path config;
  std::filesystem::path classes;  // COCO doc supplying the class catalog
  std::filesystem::path fp_dir;
  std::optional<std::filesystem::path> objects;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

inline int cmd_mosaic(const MosaicOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  const std::uint64_t seed = detail::require_seed(cfg, opt.seed, "mosaic");
  const int workers = opt.workers.value_or(cfg.workers);
  const AnnotatedDataset catalog = parse_coco(
      detail::read_text_file(opt.classes, "classes"));
  if (catalog.classes.empty()) {
    throw_validation("mosaic: the --classes document has no categories");
  }

  const auto fp_crops = detail::load_fp_crops(opt.fp_dir, catalog.classes);
  MosaicSpec spec = cfg.mosaic;
  spec.seed = seed;
  const auto mosaics = build_mosaics(fp_crops, spec, workers);

  std::vector<PasteObject> objects;
  if (opt.objects) objects = detail::load_object_library(*opt.objects, catalog.classes);

  const auto names = detail::class_names(catalog.classes);
  AnnotatedDataset out_ds;
  out_ds.classes = catalog.classes;
  Manifest manifest;
  manifest.subcommand = "mosaic";
  manifest.config_hash = cfg.config_hash;
  manifest.seed = seed;
  manifest.workers = workers;

  std::map<int, int> per_class_index;
  std::int64_t image_id = 1;
  for (const MosaicImage& m : mosaics) {
    Raster raster = m.raster;
    std::optional<Annotation> inserted;
    if (!objects.empty()) {
      // One opposite-class object per mosaic, never the tiles' own class.
      InsertResult result = insert_opposite_class_object(
          raster, m.source_class, objects, mix_seed(seed, image_id));
      raster = std::move(result.raster);
      inserted = result.annotation;
    }
    char file_name[64];
    std::snprintf(file_name, sizeof(file_name), "mosaic_%s_%03d.png",
                  names.at(m.source_class).c_str(),
                  per_class_index[m.source_class]++);
    save_image(raster, opt.out_dir / file_name);
    ImageRecord rec;
    rec.id = image_id;
    rec.file_name = file_name;
    rec.width = raster.width;
    rec.height = raster.height;
    out_ds.images.push_back(rec);
    if (inserted) {
      inserted->image_id = image_id;
      out_ds.annotations.push_back(*inserted);
    }
    ++image_id;
  }
  detail::write_text_file(opt.out_dir / "mosaics.json", serialize_coco(out_ds));

  for (const auto& [class_id, crops] : fp_crops) {
    manifest.counts["fp_crops_" + names.at(class_id)] =
        static_cast<std::int64_t>(crops.size());
  }
  manifest.counts["mosaics"] = static_cast<std::int64_t>(mosaics.size());
  manifest.counts["inserted_objects"] =
      static_cast<std::int64_t>(out_ds.annotations.size());
  manifest.outputs.push_back((opt.out_dir / "mosaics.json").string());
  write_manifest(manifest, opt.out_dir / "mosaic.manifest.json");

  std::cout << "mosaic: " << mosaics.size() << " mosaics, "
            << out_ds.annotations.size() << " inserted objects\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// object pasting
// ---------------------------------------------------------------------------

struct PasteOptions {
  std::filesystem::path config;
  std::filesystem::path backgrounds;
  std::filesystem::path objects;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> images_root;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

inline int cmd_paste(const PasteOptions& opt) {
  RunConfig cfg = load_run_config(opt.config);
  const std::uint64_t seed = detail::require_seed(cfg, opt.seed, "paste");
  const int workers = opt.workers.value_or(cfg.workers);
  AnnotatedDataset backgrounds = detail::load_dataset(opt.backgrounds);
  if (backgrounds.classes.empty()) {
    throw_validation("paste: the backgrounds document has no categories");
  }
  const std::filesystem::path images_root =
      opt.images_root.value_or(opt.backgrounds.parent_path());

  // Flight metadata: keep what the document carries, read EXIF for the rest.
  int exif_hits = 0;
  for (ImageRecord& im : backgrounds.images) {
    if (im.flight_meta) continue;
    im.flight_meta = read_exif(images_root / im.file_name, cfg.camera_table);
    if (im.flight_meta) ++exif_hits;
  }

  const auto objects = detail::load_object_library(opt.objects, backgrounds.classes);
  PasteConfig paste_cfg = cfg.paste;
  paste_cfg.seed = seed;
  if (!cfg.paste_class_mix_by_name.empty()) {
    paste_cfg.class_mix =
        resolve_class_mix(cfg.paste_class_mix_by_name, backgrounds.classes);
  } else {
    for (const PasteObject& o : objects) paste_cfg.class_mix[o.class_id] = 1.0;
  }

  const PasteRunResult result = generate_pasted_dataset(
      backgrounds.images, objects, paste_cfg, backgrounds.classes, images_root,
      workers);
  for (const PastedImage& im : result.images) {
    save_image(im.raster, opt.out_dir / im.record.file_name);
  }
  detail::write_text_file(opt.out_dir / "pasted.json",
                          serialize_coco(result.dataset));

  Manifest manifest;
  manifest.subcommand = "paste";
  manifest.config_hash = cfg.config_hash;
  manifest.seed = seed;
  manifest.workers = workers;
  manifest.counts["backgrounds"] =
      static_cast<std::int64_t>(backgrounds.images.size());
  manifest.counts["backgrounds_with_flight_meta"] = [&] {
    std::int64_t n = 0;
    for (const auto& im : backgrounds.images) {
      if (im.flight_meta) ++n;
    }
    return n;
  }();
  manifest.counts["exif_resolved"] = exif_hits;
  manifest.counts["objects"] = static_cast<std::int64_t>(objects.size());
  manifest.counts["annotations"] =
      static_cast<std::int64_t>(result.dataset.annotations.size());
  const auto names = detail::class_names(backgrounds.classes);
  std::map<int, std::int64_t> per_class;
  for (const auto& a : result.dataset.annotations) per_class[a.class_id]++;
  for (const auto& [class_id, count] : per_class) {
    manifest.counts["pasted_" + names.at(class_id)] = count;
  }
  manifest.warnings = result.warnings;
  manifest.outputs.push_back((opt.out_dir / "pasted.json").string());
  write_manifest(manifest, opt.out_dir / "paste.manifest.json");

  std::cout << "paste: " << result.images.size() << " images, "
            << result.dataset.annotations.size() << " pasted objects, "
            << result.warnings.size() << " warnings\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// consensus dataset building
// ---------------------------------------------------------------------------

struct ConsensusOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path images;
  std::vector<std::string> predictions;  // name=path
  std::filesystem::path out;
};

inline int cmd_consensus(const ConsensusOptions& opt) {
  RunConfig cfg = opt.config ? load_run_config(*opt.config) : RunConfig{};
  const AnnotatedDataset images = detail::load_dataset(opt.images);
  std::map<std::string, std::vector<Detection>> per_model;
  for (const std::string& arg : opt.predictions) {
    const auto [name, path] = detail::parse_named_path(arg);
    if (per_model.count(name)) {
      throw_validation("consensus: duplicate model name '" + name + "'");
    }
    per_model[name] = detail::load_predictions(path, name);
  }
  const AnnotatedDataset consensus =
      build_consensus(per_model, images.images, images.classes, cfg.consensus);
  detail::write_text_file(opt.out, serialize_coco(consensus));

  Manifest manifest;
  manifest.subcommand = "consensus";
  manifest.config_hash = cfg.config_hash;
  manifest.counts["models"] = static_cast<std::int64_t>(per_model.size());
  std::int64_t total_preds = 0;
  for (const auto& [name, dets] : per_model) {
    total_preds += static_cast<std::int64_t>(dets.size());
  }
  manifest.counts["predictions"] = total_preds;
  manifest.counts["annotations"] =
      static_cast<std::int64_t>(consensus.annotations.size());
  manifest.outputs.push_back(opt.out.string());
  write_manifest(manifest, opt.out.string() + ".manifest.json");

  std::cout << "consensus: " << per_model.size() << " models, " << total_preds
            << " predictions -> " << consensus.annotations.size()
            << " annotations\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path predictions;
  std::filesystem::path ground_truth;
  std::filesystem::path out_dir;
  std::optional<double> iou;
  std::optional<double> confidence;
};

inline int cmd_eval(const EvalOptions& opt) {
  RunConfig cfg = opt.config ? load_run_config(*opt.config) : RunConfig{};
  const double iou_thr = opt.iou.value_or(cfg.evaluation.iou_threshold);
  const double conf_thr = opt.confidence.value_or(cfg.evaluation.confidence_threshold);
  const AnnotatedDataset gt = detail::load_dataset(opt.ground_truth);
  const auto preds = detail::load_predictions(opt.predictions, "predictions");

  const MetricReport report = compute_map(preds, gt);
  const auto names = detail::class_names(gt.classes);

  std::ostringstream text;
  text << format_metric_table(report);
  text << "per-class AP @ IoU=0.50:0.95\n";
  for (const auto& [class_id, ap] : report.per_class_ap) {
    text << "  " << names.at(class_id) << ": " << std::fixed
         << std::setprecision(3) << ap << "\n";
  }
  detail::write_text_file(opt.out_dir / "metrics.txt", text.str());

  nlohmann::json metrics{{"map_50_95", report.map_50_95},
                         {"map_50", report.map_50},
                         {"map_75", report.map_75},
                         {"map_small", report.map_small},
                         {"map_medium", report.map_medium},
                         {"map_large", report.map_large},
                         {"mar_50_95", report.mar_50_95}};
  for (const auto& [class_id, ap] : report.per_class_ap) {
    metrics["per_class_ap"][names.at(class_id)] = ap;
  }
  detail::write_text_file(opt.out_dir / "metrics.json", metrics.dump(2) + "\n");

  for (const auto& [suffix, normalize] :
       std::vector<std::pair<std::string, Normalize>>{
           {"counts", Normalize::none},
           {"row", Normalize::row},
           {"column", Normalize::column}}) {
    const ConfusionMatrix m = confusion_matrix(preds, gt.annotations, gt.classes,
                                               iou_thr, conf_thr, normalize,
                                               &gt.images);
    detail::write_text_file(opt.out_dir / ("confusion_" + suffix + ".txt"),
                            format_confusion_matrix(m, gt.classes));
  }

  Manifest manifest;
  manifest.subcommand = "eval";
  manifest.config_hash = cfg.config_hash;
  manifest.counts["predictions"] = static_cast<std::int64_t>(preds.size());
  manifest.counts["ground_truth"] = static_cast<std::int64_t>(gt.annotations.size());
  manifest.outputs = {(opt.out_dir / "metrics.txt").string(),
                      (opt.out_dir / "metrics.json").string()};
  write_manifest(manifest, opt.out_dir / "eval.manifest.json");

  std::cout << format_metric_table(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// label-format conversion
// ---------------------------------------------------------------------------

struct ConvertOptions {
  std::string to;  // "yolo" or "coco"
  std::optional<std::filesystem::path> input;        // COCO in
  std::optional<std::filesystem::path> yolo_dir;     // YOLO in
  std::optional<std::filesystem::path> images;       // dims catalog for YOLO in
  std::filesystem::path out_dir;
};

inline int cmd_convert(const ConvertOptions& opt) {
  if (opt.to == "yolo") {
    if (!opt.input) throw_validation("convert: --in is required for --to yolo");
    const AnnotatedDataset ds = detail::load_dataset(*opt.input);
    const auto written = convert_labels(ds, LabelFormat::yolo, opt.out_dir);
    std::cout << "convert: wrote " << written.size() << " YOLO label files\n";
    return kExitOk;
  }
  if (opt.to == "coco") {
    if (!opt.yolo_dir || !opt.images) {
      throw_validation("convert: --in-yolo-dir and --images are required for --to coco");
    }
    AnnotatedDataset ds = detail::load_dataset(*opt.images);
    ds.annotations.clear();
    for (const ImageRecord& im : ds.images) {
      const auto stem = std::filesystem::path(im.file_name).stem().string();
      const auto label_path = *opt.yolo_dir / (stem + ".txt");
      if (!std::filesystem::exists(label_path)) continue;
      for (Annotation& a :
           parse_yolo_labels(detail::read_text_file(label_path, "yolo"), im)) {
        ds.annotations.push_back(std::move(a));
      }
    }
    detail::write_text_file(opt.out_dir / "annotations.json", serialize_coco(ds));
    std::cout << "convert: wrote " << ds.annotations.size() << " annotations\n";
    return kExitOk;
  }
  throw_validation("convert: --to must be 'yolo' or 'coco'");
}

// ---------------------------------------------------------------------------
// dataset splitting
// ---------------------------------------------------------------------------

struct SplitOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path input;
  double fraction = 0.9;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_train;
  std::filesystem::path out_eval;
};

inline int cmd_split(const SplitOptions& opt) {
  RunConfig cfg = opt.config ? load_run_config(*opt.config) : RunConfig{};
  const std::uint64_t seed = detail::require_seed(cfg, opt.seed, "split");
  const AnnotatedDataset ds = detail::load_dataset(opt.input);
  const auto [train, eval] = split_dataset(ds, opt.fraction, seed);
  detail::write_text_file(opt.out_train, serialize_coco(train));
  detail::write_text_file(opt.out_eval, serialize_coco(eval));

  Manifest manifest;
  manifest.subcommand = "split";
  manifest.config_hash = cfg.config_hash;
  manifest.seed = seed;
  manifest.counts["images"] = static_cast<std::int64_t>(ds.images.size());
  manifest.counts["train_images"] = static_cast<std::int64_t>(train.images.size());
  manifest.counts["eval_images"] = static_cast<std::int64_t>(eval.images.size());
  manifest.outputs = {opt.out_train.string(), opt.out_eval.string()};
  write_manifest(manifest, opt.out_train.string() + ".manifest.json");

  std::cout << "split: " << train.images.size() << " train / "
            << eval.images.size() << " eval images\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// argument wiring
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"Aerial assisted-labeling toolkit: multi-detector fusion, "
               "FP/FN mining, mosaic and paste augmentation, consensus "
               "dataset building, and COCO-style evaluation"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  LabelOptions label_opt;
  auto* label = app.add_subcommand(
      "label", "Run the detector stack and filter chain over a dataset");
  label->add_option("--config", label_opt.config, "Run config file")->required();
  label->add_option("--images", label_opt.images, "COCO document with images")
      ->required();
  label->add_option("--out", label_opt.out, "Output proposals file")->required();
  std::uint64_t label_seed = 0;
  label->add_option("--seed", label_seed, "Seed override")
      ->each([&](const std::string&) { label_opt.seed = label_seed; });
  int label_workers = 0;
  label->add_option("--workers", label_workers, "Worker thread cap")
      ->each([&](const std::string&) { label_opt.workers = label_workers; });

  FpFnOptions fpfn_opt;
  auto* fpfn = app.add_subcommand(
      "fpfn", "Extract false positives / false negatives (zero-IoU rule)");
  std::string fpfn_config, fpfn_images_root;
  fpfn->add_option("--config", fpfn_config, "Run config file")
      ->each([&](const std::string& v) { fpfn_opt.config = v; });
  fpfn->add_option("--pred", fpfn_opt.predictions,
                   "Predictions as name=path (repeatable)")
      ->required();
  fpfn->add_option("--gt", fpfn_opt.ground_truth, "Ground-truth COCO document")
      ->required();
  fpfn->add_option("--out-dir", fpfn_opt.out_dir, "Output directory")->required();
  double fpfn_conf = 0.0;
  fpfn->add_option("--conf", fpfn_conf, "Confidence threshold (default 0.3)")
      ->each([&](const std::string&) { fpfn_opt.confidence = fpfn_conf; });
  fpfn->add_option("--images-root", fpfn_images_root,
                   "Image directory; enables crop extraction")
      ->each([&](const std::string& v) { fpfn_opt.images_root = v; });

  MosaicOptions mosaic_opt;
  auto* mosaic = app.add_subcommand(
      "mosaic", "Tile FP crops into mosaic images with one opposite-class object");
  mosaic->add_option("--config", mosaic_opt.config, "Run config file")->required();
  mosaic->add_option("--classes", mosaic_opt.classes,
                     "COCO document supplying the class catalog")
      ->required();
  mosaic->add_option("--fp-dir", mosaic_opt.fp_dir,
                     "FP crops directory (<class>/*.png)")
      ->required();
  std::string mosaic_objects;
  mosaic->add_option("--objects", mosaic_objects,
                     "Object library for opposite-class insertion")
      ->each([&](const std::string& v) { mosaic_opt.objects = v; });
  mosaic->add_option("--out-dir", mosaic_opt.out_dir, "Output directory")->required();
  std::uint64_t mosaic_seed = 0;
  mosaic->add_option("--seed", mosaic_seed, "Seed override")
      ->each([&](const std::string&) { mosaic_opt.seed = mosaic_seed; });
  int mosaic_workers = 0;
  mosaic->add_option("--workers", mosaic_workers, "Worker thread cap")
      ->each([&](const std::string&) { mosaic_opt.workers = mosaic_workers; });

  PasteOptions paste_opt;
  auto* paste = app.add_subcommand(
      "paste", "Paste metrically scaled objects onto clean backgrounds");
  paste->add_option("--config", paste_opt.config, "Run config file")->required();
  paste->add_option("--backgrounds", paste_opt.backgrounds,
                    "COCO document listing object-free backgrounds")
      ->required();
  paste->add_option("--objects", paste_opt.objects, "Object library directory")
      ->required();
  paste->add_option("--out-dir", paste_opt.out_dir, "Output directory")->required();
  std::string paste_root;
  paste->add_option("--images-root", paste_root, "Background image directory")
      ->each([&](const std::string& v) { paste_opt.images_root = v; });
  std::uint64_t paste_seed = 0;
  paste->add_option("--seed", paste_seed, "Seed override")
      ->each([&](const std::string&) { paste_opt.seed = paste_seed; });
  int paste_workers = 0;
  paste->add_option("--workers", paste_workers, "Worker thread cap")
      ->each([&](const std::string&) { paste_opt.workers = paste_workers; });

  ConsensusOptions consensus_opt;
  auto* consensus = app.add_subcommand(
      "consensus", "Build a dataset from boxes several models agree on");
  std::string consensus_config;
  consensus->add_option("--config", consensus_config, "Run config file")
      ->each([&](const std::string& v) { consensus_opt.config = v; });
  consensus->add_option("--images", consensus_opt.images,
                        "COCO document with images and categories")
      ->required();
  consensus->add_option("--pred", consensus_opt.predictions,
                        "Model predictions as name=path (repeatable)")
      ->required();
  consensus->add_option("--out", consensus_opt.out, "Output dataset file")
      ->required();

  EvalOptions eval_opt;
  auto* eval = app.add_subcommand(
      "eval", "COCO-style metrics and confusion matrices");
  std::string eval_config;
  eval->add_option("--config", eval_config, "Run config file")
      ->each([&](const std::string& v) { eval_opt.config = v; });
  eval->add_option("--pred", eval_opt.predictions, "Predictions file")->required();
  eval->add_option("--gt", eval_opt.ground_truth, "Ground-truth COCO document")
      ->required();
  eval->add_option("--out-dir", eval_opt.out_dir, "Output directory")->required();
  double eval_iou = 0.0, eval_conf = 0.0;
  eval->add_option("--iou", eval_iou, "Matching IoU (default 0.5)")
      ->each([&](const std::string&) { eval_opt.iou = eval_iou; });
  eval->add_option("--conf", eval_conf, "Confidence threshold (default 0.3)")
      ->each([&](const std::string&) { eval_opt.confidence = eval_conf; });

  ConvertOptions convert_opt;
  auto* convert = app.add_subcommand("convert", "Convert between COCO and YOLO labels");
  convert->add_option("--to", convert_opt.to, "Target format: yolo or coco")
      ->required();
  std::string convert_in, convert_yolo_dir, convert_images;
  convert->add_option("--in", convert_in, "Input COCO document")
      ->each([&](const std::string& v) { convert_opt.input = v; });
  convert->add_option("--in-yolo-dir", convert_yolo_dir, "Input YOLO label directory")
      ->each([&](const std::string& v) { convert_opt.yolo_dir = v; });
  convert->add_option("--images", convert_images,
                      "COCO document with image dimensions (for --to coco)")
      ->each([&](const std::string& v) { convert_opt.images = v; });
  convert->add_option("--out-dir", convert_opt.out_dir, "Output directory")
      ->required();

  SplitOptions split_opt;
  auto* split = app.add_subcommand("split", "Image-level train/eval split");
  std::string split_config;
  split->add_option("--config", split_config, "Run config file")
      ->each([&](const std::string& v) { split_opt.config = v; });
  split->add_option("--in", split_opt.input, "Input COCO document")->required();
  split->add_option("--fraction", split_opt.fraction, "Training fraction")
      ->required();
  std::uint64_t split_seed = 0;
  split->add_option("--seed", split_seed, "Split seed")
      ->each([&](const std::string&) { split_opt.seed = split_seed; });
  split->add_option("--out-train", split_opt.out_train, "Training output file")
      ->required();
  split->add_option("--out-eval", split_opt.out_eval, "Evaluation output file")
      ->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (label->parsed()) return cmd_label(label_opt);
    if (fpfn->parsed()) return cmd_fpfn(fpfn_opt);
    if (mosaic->parsed()) return cmd_mosaic(mosaic_opt);
    if (paste->parsed()) return cmd_paste(paste_opt);
    if (consensus->parsed()) return cmd_consensus(consensus_opt);
    if (eval->parsed()) return cmd_eval(eval_opt);
    if (convert->parsed()) return cmd_convert(convert_opt);
    if (split->parsed()) return cmd_split(split_opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::validation: return kExitConfig;
      case ErrorKind::io: return kExitIo;
      case ErrorKind::processing: return kExitProcessing;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitProcessing;
  }
  return kExitOk;
}

}  // namespace aerolabel::cli
