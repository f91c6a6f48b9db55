#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerolabel/annotations.hpp"
#include "aerolabel/errors.hpp"

namespace aerolabel {

/// Camera model -> sensor width in millimeters. EXIF rarely stores sensor
/// width, so the GSD formula resolves it through this table; entries can be
/// extended or overridden from a JSON config file.
struct CameraTable {
  std::map<std::string, double> sensor_width_mm_by_model;

  static CameraTable builtin() {
    CameraTable t;
    t.sensor_width_mm_by_model = {
        {"FC220", 6.17},    // DJI Mavic Pro
        {"FC300X", 6.17},   // DJI Phantom 3
        {"FC330", 6.17},    // DJI Phantom 4
        {"FC6310", 13.2},   // DJI Phantom 4 Pro
        {"FC3170", 6.4},    // DJI Mavic Air 2
        {"FC3411", 13.2},   // DJI Air 2S
        {"L1D-20c", 13.2},  // DJI Mavic 2 Pro
        {"FC7303", 6.3},    // DJI Mini 2
    };
    return t;
  }

  static CameraTable load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("camera table: cannot read " + path.string());
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw_processing("camera table: " + std::string(e.what()));
    }
    CameraTable t = builtin();
    for (const auto& [model, width] : doc.items()) {
      t.sensor_width_mm_by_model[model] = width.get<double>();
    }
    return t;
  }

  std::optional<double> find(const std::string& model) const {
    const auto it = sensor_width_mm_by_model.find(model);
    if (it == sensor_width_mm_by_model.end()) return std::nullopt;
    return it->second;
  }
};

/// Raw tag values pulled from a JPEG's APP1 segments. Missing tags are not
/// errors; every field is optional.
struct ExifData {
  std::optional<std::string> make;
  std::optional<std::string> model;
  std::optional<double> focal_length_mm;
  std::optional<double> gps_altitude_m;       // signed via GPSAltitudeRef
  std::optional<double> relative_altitude_m;  // vendor XMP (drone-dji)
};

namespace detail {

class TiffReader {
 public:
  TiffReader(const std::uint8_t* data, std::size_t size, bool little_endian)
      : data_(data), size_(size), le_(little_endian) {}

  bool in_bounds(std::size_t off, std::size_t len) const {
    return off + len <= size_ && off + len >= off;
  }
  std::uint16_t u16(std::size_t off) const {
    if (!in_bounds(off, 2)) return 0;
    return le_ ? static_cast<std::uint16_t>(data_[off] | data_[off + 1] << 8)
               : static_cast<std::uint16_t>(data_[off] << 8 | data_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    if (!in_bounds(off, 4)) return 0;
    if (le_) {
      return data_[off] | data_[off + 1] << 8 | data_[off + 2] << 16 |
             static_cast<std::uint32_t>(data_[off + 3]) << 24;
    }
    return static_cast<std::uint32_t>(data_[off]) << 24 | data_[off + 1] << 16 |
           data_[off + 2] << 8 | data_[off + 3];
  }
  const std::uint8_t* raw(std::size_t off) const { return data_ + off; }
  std::size_t size() const { return size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  bool le_;
};

struct IfdEntry {
  std::uint16_t tag = 0;
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // absolute offset of the value bytes
};

inline std::vector<IfdEntry> read_ifd(const TiffReader& tiff, std::size_t ifd_off) {
  std::vector<IfdEntry> entries;
  if (!tiff.in_bounds(ifd_off, 2)) return entries;
  const std::uint16_t count = tiff.u16(ifd_off);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::size_t e = ifd_off + 2 + static_cast<std::size_t>(i) * 12;
    if (!tiff.in_bounds(e, 12)) break;
    IfdEntry entry;
    entry.tag = tiff.u16(e);
    entry.type = tiff.u16(e + 2);
    entry.count = tiff.u32(e + 4);
    // Types: 1 BYTE, 2 ASCII, 3 SHORT, 4 LONG, 5 RATIONAL, 10 SRATIONAL.
    static const std::size_t type_sizes[] = {0, 1, 1, 2, 4, 8, 1, 1, 2, 4, 8};
    const std::size_t elem = entry.type < 11 ? type_sizes[entry.type] : 0;
    const std::size_t total = elem * entry.count;
    entry.value_offset = (total <= 4) ? e + 8 : tiff.u32(e + 8);
    entries.push_back(entry);
  }
  return entries;
}

inline std::optional<double> rational(const TiffReader& tiff, const IfdEntry& e) {
  if ((e.type != 5 && e.type != 10) || e.count < 1) return std::nullopt;
  if (!tiff.in_bounds(e.value_offset, 8)) return std::nullopt;
  const std::uint32_t num = tiff.u32(e.value_offset);
  const std::uint32_t den = tiff.u32(e.value_offset + 4);
  if (den == 0) return std::nullopt;
  if (e.type == 10) {
    return static_cast<double>(static_cast<std::int32_t>(num)) /
           static_cast<double>(static_cast<std::int32_t>(den));
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

inline std::optional<std::string> ascii(const TiffReader& tiff, const IfdEntry& e) {
  if (e.type != 2 || e.count == 0) return std::nullopt;
  if (!tiff.in_bounds(e.value_offset, e.count)) return std::nullopt;
  std::string s(reinterpret_cast<const char*>(tiff.raw(e.value_offset)), e.count);
  while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
  return s;
}

inline void parse_exif_app1(const std::uint8_t* seg, std::size_t len, ExifData& out) {
  // Payload: "Exif\0\0" + TIFF stream.
  if (len < 14 || std::memcmp(seg, "Exif\0\0", 6) != 0) return;
  const std::uint8_t* tiff_base = seg + 6;
  const std::size_t tiff_len = len - 6;
  bool little = false;
  if (tiff_base[0] == 'I' && tiff_base[1] == 'I') {
    little = true;
  } else if (tiff_base[0] == 'M' && tiff_base[1] == 'M') {
    little = false;
  } else {
    return;
  }
  const TiffReader tiff(tiff_base, tiff_len, little);
  if (tiff.u16(2) != 0x002A) return;

  std::size_t exif_ifd = 0, gps_ifd = 0;
  for (const IfdEntry& e : read_ifd(tiff, tiff.u32(4))) {
    switch (e.tag) {
      case 0x010F: out.make = ascii(tiff, e); break;
      case 0x0110: out.model = ascii(tiff, e); break;
      case 0x8769: exif_ifd = tiff.u32(e.value_offset); break;
      case 0x8825: gps_ifd = tiff.u32(e.value_offset); break;
      default: break;
    }
  }
  if (exif_ifd) {
    for (const IfdEntry& e : read_ifd(tiff, exif_ifd)) {
      if (e.tag == 0x920A) out.focal_length_mm = rational(tiff, e);
    }
  }
  if (gps_ifd) {
    std::optional<double> altitude;
    int ref = 0;
    for (const IfdEntry& e : read_ifd(tiff, gps_ifd)) {
      if (e.tag == 0x0005 && tiff.in_bounds(e.value_offset, 1)) {
        ref = *tiff.raw(e.value_offset);
      } else if (e.tag == 0x0006) {
        altitude = rational(tiff, e);
      }
    }
    if (altitude) out.gps_altitude_m = (ref == 1) ? -*altitude : *altitude;
  }
}

inline void parse_xmp_app1(const std::uint8_t* seg, std::size_t len, ExifData& out) {
  static const char kHeader[] = "http://ns.adobe.com/xap/1.0/";
  const std::size_t header_len = sizeof(kHeader);  // includes the trailing NUL
  if (len < header_len || std::memcmp(seg, kHeader, header_len) != 0) return;
  const std::string xml(reinterpret_cast<const char*>(seg + header_len),
                        len - header_len);
  // DJI writes drone-dji:RelativeAltitude either as an XML attribute
  // (="+12.3") or as element text.
  const std::size_t pos = xml.find("RelativeAltitude");
  if (pos == std::string::npos) return;
  std::size_t i = pos + std::strlen("RelativeAltitude");
  while (i < xml.size() && (xml[i] == '=' || xml[i] == '"' || xml[i] == '\'' ||
                            xml[i] == '>' || std::isspace(static_cast<unsigned char>(xml[i])))) {
    ++i;
  }
  std::size_t j = i;
  while (j < xml.size() && (std::isdigit(static_cast<unsigned char>(xml[j])) ||
                            xml[j] == '+' || xml[j] == '-' || xml[j] == '.')) {
    ++j;
  }
  if (j > i) {
    try {
      out.relative_altitude_m = std::stod(xml.substr(i, j - i));
    } catch (const std::exception&) {
    }
  }
}

}  // namespace detail

/// Pull the tags this pipeline cares about from a JPEG's APP1 segments.
/// Files without EXIF (including PNGs) simply return an empty record.
inline ExifData read_exif_data(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("read_exif: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  ExifData out;
  if (bytes.size() < 4 || bytes[0] != 0xFF || bytes[1] != 0xD8) return out;
  std::size_t i = 2;
  while (i + 4 <= bytes.size() && bytes[i] == 0xFF) {
    const std::uint8_t marker = bytes[i + 1];
    if (marker == 0xDA || marker == 0xD9) break;  // image data / end
    const std::size_t seg_len =
        (static_cast<std::size_t>(bytes[i + 2]) << 8) + bytes[i + 3];
    if (seg_len < 2 || i + 2 + seg_len > bytes.size()) break;
    if (marker == 0xE1) {
      detail::parse_exif_app1(bytes.data() + i + 4, seg_len - 2, out);
      detail::parse_xmp_app1(bytes.data() + i + 4, seg_len - 2, out);
    }
    i += 2 + seg_len;
  }
  return out;
}

/// Resolve FlightMeta for an image: altitude from the vendor relative-altitude
/// tag when present (GPS altitude otherwise), focal length from EXIF, sensor
/// width from the camera table unless overridden. Absent when any of the
/// three cannot be resolved.
inline std::optional<FlightMeta> read_exif(
    const std::filesystem::path& path,
    const CameraTable& table = CameraTable::builtin(),
    std::optional<double> sensor_width_override = std::nullopt) {
  const ExifData exif = read_exif_data(path);
  const std::optional<double> altitude =
      exif.relative_altitude_m ? exif.relative_altitude_m : exif.gps_altitude_m;
  if (!altitude || !exif.focal_length_mm) return std::nullopt;

  std::optional<double> sensor = sensor_width_override;
  if (!sensor && exif.model) sensor = table.find(*exif.model);
  if (!sensor) return std::nullopt;

  FlightMeta meta{*altitude, *exif.focal_length_mm, *sensor};
  if (!meta.valid()) return std::nullopt;
  return meta;
}

}  // namespace aerolabel
