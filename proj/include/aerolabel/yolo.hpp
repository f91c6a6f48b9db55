#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aerolabel/annotations.hpp"
#include "aerolabel/coco.hpp"
#include "aerolabel/errors.hpp"

namespace aerolabel {

// YOLO label convention: one "<stem>.txt" per image, lines
// "class_id cx cy w h" normalized to [0,1] by the image dimensions,
// 6-decimal fixed precision.

inline std::string yolo_line(const Annotation& a, const ImageRecord& image) {
  if (image.width <= 0 || image.height <= 0) {
    throw_processing("yolo: image " + std::to_string(image.id) +
                     " has no usable dimensions for normalization");
  }
  const double w = static_cast<double>(image.width);
  const double h = static_cast<double>(image.height);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f", a.class_id,
                a.box.center_x() / w, a.box.center_y() / h, a.box.width() / w,
                a.box.height() / h);
  return buf;
}

/// Label file contents per image, keyed by "<stem>.txt". Every image gets an
/// entry; images without annotations map to an empty file.
inline std::map<std::string, std::string> yolo_label_files(
    const AnnotatedDataset& ds) {
  std::map<std::string, std::string> files;
  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& im : ds.images) {
    by_id[im.id] = &im;
    const std::string stem = std::filesystem::path(im.file_name).stem().string();
    files.emplace(stem + ".txt", std::string());
  }
  for (const auto& a : ds.annotations) {
    auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      throw_processing("yolo: annotation references missing image id " +
                       std::to_string(a.image_id));
    }
    const std::string stem =
        std::filesystem::path(it->second->file_name).stem().string();
    files[stem + ".txt"] += yolo_line(a, *it->second) + "\n";
  }
  return files;
}

inline std::vector<std::filesystem::path> write_yolo_labels(
    const AnnotatedDataset& ds, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::vector<std::filesystem::path> written;
  for (const auto& [name, content] : yolo_label_files(ds)) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_io("yolo: cannot write " + path.string());
    out << content;
    written.push_back(path);
  }
  return written;
}

/// Inverse conversion, used for round-trip testing and the convert
/// subcommand. `stem -> lines` must come from files named after image stems.
inline std::vector<Annotation> parse_yolo_labels(const std::string& text,
                                                 const ImageRecord& image) {
  std::vector<Annotation> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
    if (!(fields >> class_id >> cx >> cy >> w >> h)) {
      throw_processing("yolo parse: line " + std::to_string(line_no) +
                       ": expected 5 whitespace-separated fields");
    }
    Annotation a;
    a.image_id = image.id;
    a.class_id = class_id;
    const double iw = static_cast<double>(image.width);
    const double ih = static_cast<double>(image.height);
    a.box = {(cx - w / 2) * iw, (cy - h / 2) * ih, (cx + w / 2) * iw,
             (cy + h / 2) * ih};
    out.push_back(a);
  }
  return out;
}

enum class LabelFormat { coco, yolo };

/// Write the dataset's labels under `out_dir` in the requested convention and
/// return the written paths.
inline std::vector<std::filesystem::path> convert_labels(
    const AnnotatedDataset& ds, LabelFormat format,
    const std::filesystem::path& out_dir) {
  if (format == LabelFormat::yolo) return write_yolo_labels(ds, out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const auto path = out_dir / "annotations.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("convert: cannot write " + path.string());
  out << serialize_coco(ds);
  return {path};
}

}  // namespace aerolabel
