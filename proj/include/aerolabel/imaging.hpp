#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "aerolabel/errors.hpp"
#include "aerolabel/geometry.hpp"

namespace aerolabel {

/// 8-bit interleaved RGB or RGBA image. Value type; per-image operations are
/// pure and safe to run concurrently.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;  // 3 = RGB, 4 = RGBA
  std::vector<std::uint8_t> data;

  static Raster filled(int w, int h, int ch, std::uint8_t value) {
    Raster r;
    r.width = w;
    r.height = h;
    r.channels = ch;
    r.data.assign(static_cast<std::size_t>(w) * h * ch, value);
    return r;
  }

  std::uint8_t* pixel(int x, int y) {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  const std::uint8_t* pixel(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  std::uint8_t alpha(int x, int y) const {
    return channels == 4 ? pixel(x, y)[3] : 255;
  }

  BoundingBox bounds() const {
    return {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)};
  }
  bool operator==(const Raster&) const = default;
};

/// Alpha-masked object cutout. tight_box is the minimal box around all
/// alpha > 0 pixels, in crop-local pixel coordinates.
struct MaskedCrop {
  Raster raster;  // RGBA
  BoundingBox tight_box;
};

/// Minimal integer box containing every alpha > 0 pixel. Throws when the
/// raster has no opaque pixel at all.
inline BoundingBox opaque_extent(const Raster& r) {
  int x0 = r.width, y0 = r.height, x1 = -1, y1 = -1;
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      if (r.alpha(x, y) > 0) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw_validation("opaque_extent: raster has no opaque pixels");
  return {static_cast<double>(x0), static_cast<double>(y0),
          static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
}

inline MaskedCrop make_masked_crop(Raster raster) {
  if (raster.channels != 4) {
    throw_validation("make_masked_crop: raster must be RGBA");
  }
  MaskedCrop crop;
  crop.tight_box = opaque_extent(raster);
  crop.raster = std::move(raster);
  return crop;
}

namespace detail {

// OpenCV mats are BGR(A); Raster is RGB(A). Swap channels by hand so only
// core + imgcodecs are needed.
inline Raster raster_from_mat(const cv::Mat& mat, const std::string& what) {
  if (mat.empty()) throw_io(what + ": decode failed");
  if (mat.depth() != CV_8U) throw_processing(what + ": only 8-bit images supported");
  Raster r;
  r.width = mat.cols;
  r.height = mat.rows;
  const int in_ch = mat.channels();
  if (in_ch != 1 && in_ch != 3 && in_ch != 4) {
    throw_processing(what + ": unsupported channel count " + std::to_string(in_ch));
  }
  r.channels = (in_ch == 4) ? 4 : 3;
  r.data.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
  for (int y = 0; y < r.height; ++y) {
    const std::uint8_t* src = mat.ptr<std::uint8_t>(y);
    std::uint8_t* dst = r.pixel(0, y);
    for (int x = 0; x < r.width; ++x) {
      if (in_ch == 1) {
        dst[0] = dst[1] = dst[2] = src[0];
      } else {
        dst[0] = src[2];
        dst[1] = src[1];
        dst[2] = src[0];
        if (r.channels == 4) dst[3] = src[3];
      }
      src += in_ch;
      dst += r.channels;
    }
  }
  return r;
}

inline cv::Mat mat_from_raster(const Raster& r) {
  cv::Mat bgr(r.height, r.width, r.channels == 4 ? CV_8UC4 : CV_8UC3);
  for (int y = 0; y < r.height; ++y) {
    const std::uint8_t* src = r.pixel(0, y);
    std::uint8_t* dst = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < r.width; ++x) {
      dst[0] = src[2];
      dst[1] = src[1];
      dst[2] = src[0];
      if (r.channels == 4) dst[3] = src[3];
      src += r.channels;
      dst += r.channels;
    }
  }
  return bgr;
}

inline bool has_extension(const std::filesystem::path& path,
                          std::initializer_list<const char*> exts) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (const char* e : exts) {
    if (ext == e) return true;
  }
  return false;
}

}  // namespace detail

/// Load a PNG or JPEG. PNG keeps an alpha channel when present; JPEG always
/// decodes to RGB.
inline Raster load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw_io("load_image: no such file: " + path.string());
  }
  if (!detail::has_extension(path, {".png", ".jpg", ".jpeg"})) {
    throw_processing("load_image: unsupported format: " + path.string());
  }
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  return detail::raster_from_mat(mat, "load_image " + path.string());
}

inline Raster decode_image(const std::vector<std::uint8_t>& bytes) {
  const cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  return detail::raster_from_mat(mat, "decode_image");
}

/// Save as PNG (lossless, round-trips pixel data) or JPEG by extension.
inline void save_image(const Raster& r, const std::filesystem::path& path) {
  if (!detail::has_extension(path, {".png", ".jpg", ".jpeg"})) {
    throw_processing("save_image: unsupported format: " + path.string());
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (!cv::imwrite(path.string(), detail::mat_from_raster(r))) {
    throw_io("save_image: cannot write " + path.string());
  }
}

inline std::vector<std::uint8_t> encode_png(const Raster& r) {
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", detail::mat_from_raster(r), bytes)) {
    throw_processing("encode_png: encode failed");
  }
  return bytes;
}

/// Copy the pixels under `box` (rounded to integers) into a new raster.
inline Raster crop(const Raster& r, const BoundingBox& box) {
  const int x0 = static_cast<int>(std::lround(box.x_min));
  const int y0 = static_cast<int>(std::lround(box.y_min));
  const int x1 = static_cast<int>(std::lround(box.x_max));
  const int y1 = static_cast<int>(std::lround(box.y_max));
  if (x0 < 0 || y0 < 0 || x1 > r.width || y1 > r.height) {
    throw_validation("crop: box exceeds image bounds");
  }
  if (x1 <= x0 || y1 <= y0) {
    throw_validation("crop: box has no area after rounding");
  }
  Raster out;
  out.width = x1 - x0;
  out.height = y1 - y0;
  out.channels = r.channels;
  out.data.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  for (int y = 0; y < out.height; ++y) {
    const std::uint8_t* src = r.pixel(x0, y0 + y);
    std::copy(src, src + static_cast<std::size_t>(out.width) * r.channels,
              out.pixel(0, y));
  }
  return out;
}

/// Bilinear resize with center-aligned sampling and edge clamping. Identity
/// dimensions return the input pixels unchanged; constant-color images stay
/// constant for any target size.
inline Raster resize(const Raster& r, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) {
    throw_validation("resize: dimensions must be positive");
  }
  if (new_w == r.width && new_h == r.height) return r;
  Raster out;
  out.width = new_w;
  out.height = new_h;
  out.channels = r.channels;
  out.data.resize(static_cast<std::size_t>(new_w) * new_h * r.channels);
  const double sx = static_cast<double>(r.width) / new_w;
  const double sy = static_cast<double>(r.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    const double fy = std::clamp(src_y, 0.0, static_cast<double>(r.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, r.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      const double fx = std::clamp(src_x, 0.0, static_cast<double>(r.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, r.width - 1);
      const double wx = fx - x0;
      const std::uint8_t* p00 = r.pixel(x0, y0);
      const std::uint8_t* p10 = r.pixel(x1, y0);
      const std::uint8_t* p01 = r.pixel(x0, y1);
      const std::uint8_t* p11 = r.pixel(x1, y1);
      std::uint8_t* dst = out.pixel(x, y);
      for (int c = 0; c < r.channels; ++c) {
        const double top = p00[c] + (p10[c] - p00[c]) * wx;
        const double bottom = p01[c] + (p11[c] - p01[c]) * wx;
        const double value = top + (bottom - top) * wy;
        dst[c] = static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
      }
    }
  }
  return out;
}

/// Alpha-blend `crop` over `base` with its top-left corner at (x, y).
/// alpha = 255 replaces base pixels exactly, alpha = 0 leaves them untouched.
inline Raster composite(const Raster& base, const MaskedCrop& crop, int x, int y) {
  if (x < 0 || y < 0 || x + crop.raster.width > base.width ||
      y + crop.raster.height > base.height) {
    throw_validation("composite: placement exceeds base bounds");
  }
  Raster out = base;
  for (int cy = 0; cy < crop.raster.height; ++cy) {
    for (int cx = 0; cx < crop.raster.width; ++cx) {
      const std::uint8_t* src = crop.raster.pixel(cx, cy);
      const int a = src[3];
      if (a == 0) continue;
      std::uint8_t* dst = out.pixel(x + cx, y + cy);
      if (a == 255) {
        dst[0] = src[0];
        dst[1] = src[1];
        dst[2] = src[2];
        continue;
      }
      for (int c = 0; c < 3; ++c) {
        // Integer blend rounded to nearest.
        dst[c] = static_cast<std::uint8_t>((src[c] * a + dst[c] * (255 - a) + 127) / 255);
      }
    }
  }
  return out;
}

}  // namespace aerolabel
