#pragma once

// On-disk formats, all fixed little-endian regardless of host:
//
//   octmap  binary field/maps container, 34-byte header:
//           "OCTM" | version u16 = 1 | width u32 | height u32 | channels u8
//           (1 or 3) | dtype u8 = 0 (float32) | 2 reserved zero bytes |
//           pitch_x f64 | pitch_z f64, then channels*height*width float32
//           payload, row-major within each channel, channels in (n, mu_s, g)
//           order for channels = 3.
//   pgm     8-bit binary P5 render, linear or dB scaled.
//   jsonl   dataset manifest, one {"id","seed","scene_file","bscan_file",
//           "maps_file"} object per line.
//   csv     loss history and metric tables.
//
// Reading a 3-channel file snaps values within 1e-6 of a physical bound back
// onto it (float32 narrowing can overshoot, e.g. the nearest float32 to the
// g bound 0.999 is above it); anything further out fails validation.

#include "octiv/field.hpp"
#include "octiv/losses.hpp"
#include "octiv/metrics.hpp"
#include "octiv/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace octiv {

namespace detail {

constexpr char kOctmapMagic[4] = {'O', 'C', 'T', 'M'};
constexpr uint16_t kOctmapVersion = 1;
constexpr size_t kOctmapHeaderBytes = 34;

inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xFF));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<uint8_t>& b, float v) { put_u32(b, std::bit_cast<uint32_t>(v)); }
inline void put_f64(std::vector<uint8_t>& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(std::vector<uint8_t> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  size_t pos() const { return pos_; }

  uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void need(size_t n) const {
    require(pos_ + n <= bytes_.size(),
            path_ + ": unexpected end of file at byte " + std::to_string(bytes_.size()));
  }

 private:
  std::vector<uint8_t> bytes_;
  std::string path_;
  size_t pos_ = 0;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

inline std::vector<uint8_t> encode_octmap(int width, int height, int channels, double pitch_x,
                                          double pitch_z,
                                          const std::vector<const ScalarField*>& planes) {
  std::vector<uint8_t> b;
  b.reserve(kOctmapHeaderBytes +
            static_cast<size_t>(channels) * width * height * sizeof(float));
  b.insert(b.end(), kOctmapMagic, kOctmapMagic + 4);
  put_u16(b, kOctmapVersion);
  put_u32(b, static_cast<uint32_t>(width));
  put_u32(b, static_cast<uint32_t>(height));
  b.push_back(static_cast<uint8_t>(channels));
  b.push_back(0); // dtype: float32
  b.push_back(0); // reserved
  b.push_back(0);
  put_f64(b, pitch_x);
  put_f64(b, pitch_z);
  for (const ScalarField* p : planes)
    for (size_t i = 0; i < p->size(); ++i) put_f32(b, static_cast<float>((*p)[i]));
  return b;
}

} // namespace detail

inline void write_octmap(const std::string& path, const ScalarField& field) {
  detail::write_file_bytes(
      path, detail::encode_octmap(field.width(), field.height(), 1, field.pitch_x(),
                                  field.pitch_z(), {&field}));
}

inline void write_octmap(const std::string& path, const ParameterMaps& maps) {
  require(maps.n.same_shape(maps.mu_s) && maps.n.same_shape(maps.g),
          "write_octmap: channels must share shape");
  detail::write_file_bytes(
      path, detail::encode_octmap(maps.width(), maps.height(), 3, maps.n.pitch_x(),
                                  maps.n.pitch_z(), {&maps.n, &maps.mu_s, &maps.g}));
}

namespace detail {

struct OctmapRaw {
  int width = 0, height = 0, channels = 0;
  double pitch_x = 0.0, pitch_z = 0.0;
  std::vector<std::vector<double>> planes;
};

inline OctmapRaw read_octmap_raw(const std::string& path) {
  ByteReader r(read_file_bytes(path), path);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  require(std::equal(magic, magic + 4, kOctmapMagic), path + ": bad magic");
  const uint16_t version = r.u16();
  require(version == kOctmapVersion,
          path + ": unsupported version " + std::to_string(version));
  OctmapRaw raw;
  raw.width = static_cast<int>(r.u32());
  raw.height = static_cast<int>(r.u32());
  raw.channels = r.u8();
  const uint8_t dtype = r.u8();
  require(dtype == 0, path + ": unsupported dtype " + std::to_string(dtype));
  r.u8();
  r.u8(); // reserved
  raw.pitch_x = r.f64();
  raw.pitch_z = r.f64();
  require(raw.channels == 1 || raw.channels == 3,
          path + ": channels must be 1 or 3, got " + std::to_string(raw.channels));
  require(raw.width >= 1 && raw.height >= 1, path + ": degenerate dimensions");
  const size_t npx = static_cast<size_t>(raw.width) * raw.height;
  raw.planes.resize(static_cast<size_t>(raw.channels));
  for (auto& plane : raw.planes) {
    plane.resize(npx);
    for (auto& v : plane) v = static_cast<double>(r.f32());
  }
  return raw;
}

inline void snap_to_bounds(std::vector<double>& v, double lo, double hi, double tol = 1e-6) {
  for (double& x : v) {
    if (x < lo && x >= lo - tol) x = lo;
    if (x > hi && x <= hi + tol) x = hi;
  }
}

} // namespace detail

/// Reads a 1-channel octmap as a scalar field.
inline ScalarField read_octmap_field(const std::string& path) {
  auto raw = detail::read_octmap_raw(path);
  require(raw.channels == 1, path + ": expected 1 channel, got " + std::to_string(raw.channels));
  return ScalarField::from_data(raw.width, raw.height, raw.pitch_x, raw.pitch_z,
                                std::move(raw.planes[0]));
}

/// Reads a 3-channel octmap as parameter maps (re-validated on load).
inline ParameterMaps read_octmap_maps(const std::string& path) {
  auto raw = detail::read_octmap_raw(path);
  require(raw.channels == 3, path + ": expected 3 channels, got " + std::to_string(raw.channels));
  detail::snap_to_bounds(raw.planes[0], MapBounds::n_min, MapBounds::n_max);
  detail::snap_to_bounds(raw.planes[1], MapBounds::mus_min,
                         std::numeric_limits<double>::infinity());
  detail::snap_to_bounds(raw.planes[2], MapBounds::g_min, MapBounds::g_max);
  return ParameterMaps(
      ScalarField::from_data(raw.width, raw.height, raw.pitch_x, raw.pitch_z,
                             std::move(raw.planes[0])),
      ScalarField::from_data(raw.width, raw.height, raw.pitch_x, raw.pitch_z,
                             std::move(raw.planes[1])),
      ScalarField::from_data(raw.width, raw.height, raw.pitch_x, raw.pitch_z,
                             std::move(raw.planes[2])));
}

/// Channel count from the header, without reading the payload.
inline int octmap_channels(const std::string& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  require(std::equal(magic, magic + 4, detail::kOctmapMagic), path + ": bad magic");
  r.u16();
  r.u32();
  r.u32();
  return r.u8();
}

// ---------------------------------------------------------------------------
// PGM rendering.

enum class RenderScale { Linear, LogDb };

/// Writes an 8-bit binary PGM. LogDb maps I to 10*log10(I / I_max) floored at
/// floor_db (non-positive I goes to the floor) before min-max scaling. A
/// constant field renders as midpoint gray (128).
inline void render_pgm(const ScalarField& field, const std::string& path,
                       RenderScale scale = RenderScale::Linear, double floor_db = -60.0) {
  require(std::isfinite(floor_db) && floor_db < 0.0, "render_pgm: floor_db must be < 0");
  std::vector<double> v(field.size());
  if (scale == RenderScale::LogDb) {
    const double mx = field.max();
    for (size_t i = 0; i < field.size(); ++i) {
      if (mx <= 0.0 || field[i] <= 0.0)
        v[i] = floor_db;
      else
        v[i] = std::max(10.0 * std::log10(field[i] / mx), floor_db);
    }
  } else {
    for (size_t i = 0; i < field.size(); ++i) v[i] = field[i];
  }
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<uint8_t> bytes;
  const std::string header =
      "P5\n" + std::to_string(field.width()) + " " + std::to_string(field.height()) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (double x : v) {
    const double t = hi > lo ? (x - lo) / (hi - lo) : 0.5;
    bytes.push_back(static_cast<uint8_t>(std::lround(t * 255.0)));
  }
  detail::write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON lines).

struct ManifestEntry {
  uint64_t id = 0;
  uint64_t seed = 0;
  std::string scene_file;
  std::string bscan_file;
  std::string maps_file;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["seed"] = e.seed;
    j["scene_file"] = e.scene_file;
    j["bscan_file"] = e.bscan_file;
    j["maps_file"] = e.maps_file;
    out << j.dump() << "\n";
  }
  out.flush();
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.id = j.at("id").get<uint64_t>();
    e.seed = j.at("seed").get<uint64_t>();
    e.scene_file = j.at("scene_file").get<std::string>();
    e.bscan_file = j.at("bscan_file").get<std::string>();
    e.maps_file = j.at("maps_file").get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

// ---------------------------------------------------------------------------
// CSV logs and metric tables.

namespace detail {
inline std::string fmt_g(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
} // namespace detail

inline void write_loss_csv(const std::string& path, const std::vector<LossBreakdown>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << "iter,mse,fwd,tv,diff,total\n";
  for (size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << i << "," << detail::fmt_g(h.mse) << "," << detail::fmt_g(h.fwd) << ","
        << detail::fmt_g(h.tv) << "," << detail::fmt_g(h.diff) << ","
        << detail::fmt_g(h.total) << "\n";
  }
  out.flush();
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << "channel,psnr,ssim,mse\n";
  for (const auto& r : reports)
    out << channel_name(r.channel) << "," << detail::fmt_g(r.psnr) << ","
        << detail::fmt_g(r.ssim) << "," << detail::fmt_g(r.mse) << "\n";
  out.flush();
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

/// Aligned text table: one row per ablation variant, PSNR / SSIM / MSE
/// grouped per channel.
inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  auto fmt = [](double v, int prec) {
    if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return std::string(buf);
  };
  os << "variant";
  if (!rows.empty())
    for (const auto& r : rows.front().metrics)
      os << " | " << channel_name(r.channel) << " PSNR / SSIM / MSE";
  os << " | maps TV\n";
  for (const auto& row : rows) {
    os << row.name;
    for (const auto& r : row.metrics)
      os << " | " << fmt(r.psnr, 2) << " / " << fmt(r.ssim, 4) << " / "
         << detail::fmt_g(r.mse);
    os << " | " << detail::fmt_g(row.maps_tv) << "\n";
  }
  return os.str();
}

} // namespace octiv
