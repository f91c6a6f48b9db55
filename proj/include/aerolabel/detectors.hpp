#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/coco.hpp"
#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"
#include "aerolabel/imaging.hpp"
#include "aerolabel/parallel.hpp"
#include "aerolabel/rng.hpp"

namespace aerolabel {

struct Detection {
  std::int64_t image_id = 0;
  BoundingBox box;
  int class_id = 0;
  double confidence = 0.0;
  std::string source;

  bool operator==(const Detection&) const = default;
};

inline Annotation to_annotation(const Detection& d) {
  return {d.image_id, d.box, d.class_id, d.confidence, d.source};
}

inline Detection to_detection(const Annotation& a,
                              const std::string& fallback_source = "unknown") {
  return {a.image_id, a.box, a.class_id, a.confidence.value_or(1.0),
          a.source.value_or(fallback_source)};
}

// ---------------------------------------------------------------------------
// Detector abstraction
// ---------------------------------------------------------------------------

class Detector {
 public:
  virtual ~Detector() = default;
  virtual const std::string& name() const = 0;
  virtual std::vector<Detection> detect(const ImageRecord& image) const = 0;
};

/// Adapter over an externally produced COCO results file; this is how the
/// neural networks' outputs enter the pipeline.
class FilePredictionsDetector final : public Detector {
 public:
  FilePredictionsDetector(std::string name, std::vector<Annotation> predictions)
      : name_(std::move(name)) {
    for (const Annotation& a : predictions) {
      Detection d = to_detection(a, name_);
      d.source = name_;
      by_image_[d.image_id].push_back(std::move(d));
    }
  }

  static FilePredictionsDetector from_file(std::string name,
                                           const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("predictions: cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return FilePredictionsDetector(std::move(name), parse_coco_results(text));
  }

  const std::string& name() const override { return name_; }

  std::vector<Detection> detect(const ImageRecord& image) const override {
    const auto it = by_image_.find(image.id);
    if (it == by_image_.end()) return {};
    return it->second;
  }

  const std::map<std::int64_t, std::vector<Detection>>& predictions() const {
    return by_image_;
  }

 private:
  std::string name_;
  std::map<std::int64_t, std::vector<Detection>> by_image_;
};

/// Per-image prediction lists from a COCO results document, each tagged with
/// the detector name.
inline std::map<std::int64_t, std::vector<Detection>> load_file_predictions(
    const std::filesystem::path& path, const std::string& name) {
  return FilePredictionsDetector::from_file(name, path).predictions();
}

// ---------------------------------------------------------------------------
// Rule-based color fire detector
// ---------------------------------------------------------------------------

/// Fire-pixel rule: R >= r_threshold, R >= G >= B, and HSV-style saturation
/// (max-min)/max >= saturation_threshold. The thresholds are a documented
/// reconstruction; nothing authoritative pins them.
struct ColorRuleParams {
  double r_threshold = 190.0;
  double saturation_threshold = 0.2;
  int min_area_px = 30;
};

inline bool is_fire_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b,
                          const ColorRuleParams& params) {
  if (r < params.r_threshold) return false;
  if (!(r >= g && g >= b)) return false;
  const int max_c = std::max({int(r), int(g), int(b)});
  const int min_c = std::min({int(r), int(g), int(b)});
  if (max_c == 0) return false;
  const double saturation = static_cast<double>(max_c - min_c) / max_c;
  return saturation >= params.saturation_threshold;
}

/// Classify fire-like pixels, group them into 8-connected components, and emit
/// one detection per component with area >= min_area_px. Confidence is the
/// fill ratio: fire pixels inside the box / box area.
inline std::vector<Detection> color_rule_fire_detect(
    const Raster& image, const ColorRuleParams& params,
    std::int64_t image_id = 0, int fire_class_id = 0,
    const std::string& source = "color_rule") {
  if (image.channels != 3) {
    throw_validation("color_rule_fire_detect: expected a 3-channel RGB raster");
  }
  const int w = image.width;
  const int h = image.height;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* p = image.pixel(x, y);
      mask[static_cast<std::size_t>(y) * w + x] =
          is_fire_pixel(p[0], p[1], p[2], params) ? 1 : 0;
    }
  }

  // Row-major BFS labeling keeps component order deterministic.
  std::vector<std::int32_t> label(mask.size(), -1);
  std::vector<Detection> out;
  std::int32_t next_label = 0;
  std::deque<std::pair<int, int>> queue;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
      if (!mask[si] || label[si] >= 0) continue;
      const std::int32_t id = next_label++;
      label[si] = id;
      queue.clear();
      queue.emplace_back(sx, sy);
      int x0 = sx, y0 = sy, x1 = sx, y1 = sy;
      std::int64_t area = 0;
      while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        ++area;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
            if (!mask[ni] || label[ni] >= 0) continue;
            label[ni] = id;
            queue.emplace_back(nx, ny);
          }
        }
      }
      if (area < params.min_area_px) continue;

      std::int64_t fire_in_box = 0;
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          fire_in_box += mask[static_cast<std::size_t>(y) * w + x];
        }
      }
      const double box_area =
          static_cast<double>(x1 - x0 + 1) * static_cast<double>(y1 - y0 + 1);
      Detection d;
      d.image_id = image_id;
      d.box = {static_cast<double>(x0), static_cast<double>(y0),
               static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
      d.class_id = fire_class_id;
      d.confidence = static_cast<double>(fire_in_box) / box_area;
      d.source = source;
      out.push_back(std::move(d));
    }
  }
  return out;
}

/// File-loading adapter around the color rule; images resolve relative to
/// `images_root`.
class ColorRuleFireDetector final : public Detector {
 public:
  ColorRuleFireDetector(std::string name, ColorRuleParams params,
                        std::filesystem::path images_root, int fire_class_id)
      : name_(std::move(name)),
        params_(params),
        images_root_(std::move(images_root)),
        fire_class_id_(fire_class_id) {}

  const std::string& name() const override { return name_; }

  std::vector<Detection> detect(const ImageRecord& image) const override {
    Raster raster = load_image(images_root_ / image.file_name);
    return color_rule_fire_detect(raster, params_, image.id, fire_class_id_, name_);
  }

 private:
  std::string name_;
  ColorRuleParams params_;
  std::filesystem::path images_root_;
  int fire_class_id_;
};

// ---------------------------------------------------------------------------
// Synthetic detector (test stand-in for trained networks)
// ---------------------------------------------------------------------------

struct NoiseSpec {
  double box_jitter_sigma = 0.0;          // pixels
  double miss_probability = 0.0;          // [0,1]
  double false_positives_per_image = 0.0; // expected count
  double class_confusion_probability = 0.0;  // [0,1]
};

inline void validate_noise(const NoiseSpec& noise) {
  if (noise.miss_probability < 0.0 || noise.miss_probability > 1.0 ||
      noise.class_confusion_probability < 0.0 ||
      noise.class_confusion_probability > 1.0) {
    throw_validation("synthetic detector: probabilities must be in [0,1]");
  }
  if (noise.box_jitter_sigma < 0.0 || noise.false_positives_per_image < 0.0) {
    throw_validation("synthetic detector: rates must be non-negative");
  }
}

/// Corrupt ground truth into plausible predictions. Zero noise reproduces the
/// ground truth exactly with confidence 1.0; box confidence degrades with the
/// overlap lost to jitter. Per-image RNG streams keep the output a pure
/// function of (gt, noise, seed).
inline std::vector<Detection> synthetic_detect(
    const AnnotatedDataset& gt, const NoiseSpec& noise, std::uint64_t seed,
    const std::string& source = "synthetic") {
  validate_noise(noise);
  std::vector<Detection> out;
  std::vector<int> class_ids;
  for (const auto& c : gt.classes) class_ids.push_back(c.id);

  for (const ImageRecord& image : gt.images) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(image.id));
    const BoundingBox bounds = image.bounds();
    for (const Annotation& a : gt.annotations) {
      if (a.image_id != image.id) continue;
      if (noise.miss_probability > 0.0 &&
          uniform_unit(rng) < noise.miss_probability) {
        continue;
      }
      Detection d;
      d.image_id = image.id;
      d.class_id = a.class_id;
      d.source = source;
      d.box = a.box;
      if (noise.box_jitter_sigma > 0.0) {
        const double x0 = a.box.x_min + gaussian(rng, 0.0, noise.box_jitter_sigma);
        const double y0 = a.box.y_min + gaussian(rng, 0.0, noise.box_jitter_sigma);
        const double x1 = a.box.x_max + gaussian(rng, 0.0, noise.box_jitter_sigma);
        const double y1 = a.box.y_max + gaussian(rng, 0.0, noise.box_jitter_sigma);
        d.box = {std::clamp(std::min(x0, x1), bounds.x_min, bounds.x_max),
                 std::clamp(std::min(y0, y1), bounds.y_min, bounds.y_max),
                 std::clamp(std::max(x0, x1), bounds.x_min, bounds.x_max),
                 std::clamp(std::max(y0, y1), bounds.y_min, bounds.y_max)};
      }
      if (noise.class_confusion_probability > 0.0 && class_ids.size() > 1 &&
          uniform_unit(rng) < noise.class_confusion_probability) {
        int confused = d.class_id;
        while (confused == d.class_id) {
          confused = class_ids[uniform_below(rng, class_ids.size())];
        }
        d.class_id = confused;
      }
      if (d.box.area() > 0.0 && a.box.area() > 0.0) {
        d.confidence = std::max(0.05, iou(d.box, a.box));
      } else {
        d.confidence = 1.0;
      }
      out.push_back(std::move(d));
    }

    // False positives: floor(rate) guaranteed, fractional part by coin flip.
    if (noise.false_positives_per_image > 0.0) {
      const double rate = noise.false_positives_per_image;
      int count = static_cast<int>(rate);
      if (uniform_unit(rng) < rate - count) ++count;
      for (int k = 0; k < count && !class_ids.empty(); ++k) {
        const double w = uniform_real(rng, 4.0, std::max(8.0, image.width / 4.0));
        const double h = uniform_real(rng, 4.0, std::max(8.0, image.height / 4.0));
        const double x = uniform_real(rng, 0.0, std::max(1.0, image.width - w));
        const double y = uniform_real(rng, 0.0, std::max(1.0, image.height - h));
        Detection d;
        d.image_id = image.id;
        d.box = {x, y, std::min(x + w, double(image.width)),
                 std::min(y + h, double(image.height))};
        d.class_id = class_ids[uniform_below(rng, class_ids.size())];
        d.confidence = uniform_real(rng, 0.05, 0.95);
        d.source = source;
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

class SyntheticDetector final : public Detector {
 public:
  SyntheticDetector(std::string name, AnnotatedDataset gt, NoiseSpec noise,
                    std::uint64_t seed)
      : name_(std::move(name)), noise_(noise), seed_(seed) {
    validate_noise(noise_);
    // Pre-compute per image so detect() stays cheap and stateless.
    AnnotatedDataset full = std::move(gt);
    for (Detection& d : synthetic_detect(full, noise_, seed_, name_)) {
      by_image_[d.image_id].push_back(std::move(d));
    }
  }

  const std::string& name() const override { return name_; }

  std::vector<Detection> detect(const ImageRecord& image) const override {
    const auto it = by_image_.find(image.id);
    if (it == by_image_.end()) return {};
    return it->second;
  }

 private:
  std::string name_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  std::map<std::int64_t, std::vector<Detection>> by_image_;
};

// ---------------------------------------------------------------------------
// Detection manager
// ---------------------------------------------------------------------------

struct DetectionFailure {
  std::int64_t image_id = 0;
  std::string detector;
  std::string message;
};

struct DetectionRunResult {
  std::vector<Detection> detections;
  std::vector<DetectionFailure> failures;
};

/// Fan every (image, detector) pair out to the workers, keep failures
/// isolated per pair, and merge into a deterministic order: image id, then
/// detector name, then descending confidence.
inline DetectionRunResult run_detection_manager(
    const std::vector<ImageRecord>& images,
    const std::vector<const Detector*>& detectors, int workers = 1) {
  std::unordered_set<std::string> names;
  for (const Detector* d : detectors) {
    if (!names.insert(d->name()).second) {
      throw_validation("detection manager: duplicate detector name '" +
                       d->name() + "'");
    }
  }

  struct Slot {
    std::vector<Detection> detections;
    std::optional<DetectionFailure> failure;
  };
  const std::size_t total = images.size() * detectors.size();
  auto slots = parallel_map(total, workers, [&](std::size_t i) {
    const ImageRecord& image = images[i / detectors.size()];
    const Detector* detector = detectors[i % detectors.size()];
    Slot slot;
    try {
      slot.detections = detector->detect(image);
      for (Detection& d : slot.detections) d.image_id = image.id;
    } catch (const std::exception& e) {
      slot.failure = DetectionFailure{image.id, detector->name(), e.what()};
    }
    return slot;
  });

  DetectionRunResult result;
  for (Slot& slot : slots) {
    for (Detection& d : slot.detections) result.detections.push_back(std::move(d));
    if (slot.failure) result.failures.push_back(std::move(*slot.failure));
  }
  std::stable_sort(result.detections.begin(), result.detections.end(),
                   [](const Detection& a, const Detection& b) {
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     if (a.source != b.source) return a.source < b.source;
                     return a.confidence > b.confidence;
                   });
  std::stable_sort(result.failures.begin(), result.failures.end(),
                   [](const DetectionFailure& a, const DetectionFailure& b) {
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     return a.detector < b.detector;
                   });
  return result;
}

}  // namespace aerolabel
