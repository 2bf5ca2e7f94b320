#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "nlosid/error.hpp"
#include "nlosid/scene.hpp"
#include "nlosid/transient.hpp"

namespace nlosid::nlsh {

// NLSH frame file, little-endian:
//
//   "NLSH" u16 version u16 flags u32 n_pixels u32 n_bins f64 bin_width_ps
//   f64 t0_ps u8 person_id u8 position_index u8 illumination_id
//   u8 clothing_mode u64 seed
//   n_pixels × { u16 pixel_index u8 hot_flag u8 pad n_bins × u32 counts }
//
// The grid shape is not stored: square pixel counts read back as a square
// grid, anything else as a single row.

inline constexpr std::array<char, 4> kMagic = {'N', 'L', 'S', 'H'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kFlagNoiseless = 1u << 0;
inline constexpr std::size_t kHeaderSize = 44;

inline std::size_t file_size_for(std::size_t n_pixels, std::size_t n_bins) {
  return kHeaderSize + n_pixels * (4 + 4 * n_bins);
}

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& data, const char* tag = "NLSH") : data_(data), tag_(tag) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::size_t remaining() const { return data_.size() - pos_; }
  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError(std::string(tag_) + ": unexpected end of data");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  template <class T>
  T le() {
    const char* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  const std::string& data_;
  const char* tag_;
  std::size_t pos_ = 0;
};

inline std::uint32_t to_count(double v) {
  const double r = std::nearbyint(v);
  if (!(r >= 0.0) || r > 4294967295.0) throw DataError("NLSH: count out of u32 range");
  return static_cast<std::uint32_t>(r);
}

}  // namespace detail

/// Serializes a frame. Expected (non-integer) counts are rounded to the
/// nearest integer.
inline std::string encode(const PixelArrayFrame& f) {
  validate(f);
  const std::size_t n_pix = f.pixel_count();
  const std::size_t n_bins = f.n_bins();
  if (n_pix > 65536) throw DataError("NLSH: at most 65536 pixels");
  detail::Writer w;
  w.reserve(file_size_for(n_pix, n_bins));
  w.bytes(kMagic.data(), kMagic.size());
  w.u16(kVersion);
  w.u16(f.meta.noiseless ? kFlagNoiseless : 0);
  w.u32(static_cast<std::uint32_t>(n_pix));
  w.u32(static_cast<std::uint32_t>(n_bins));
  w.f64(f.bin_width_ps());
  w.f64(f.histograms.front().t0_ps);
  w.u8(static_cast<std::uint8_t>(f.meta.person_id));
  w.u8(static_cast<std::uint8_t>(f.meta.position_index));
  w.u8(static_cast<std::uint8_t>(f.meta.illumination_id));
  w.u8(static_cast<std::uint8_t>(f.meta.clothing_mode));
  w.u64(f.meta.seed);
  for (std::size_t p = 0; p < n_pix; ++p) {
    w.u16(static_cast<std::uint16_t>(p));
    w.u8(f.hot_mask[p] ? 1 : 0);
    w.u8(0);
    for (double c : f.histograms[p].counts) w.u32(detail::to_count(c));
  }
  return w.data();
}

inline PixelArrayFrame decode(const std::string& data) {
  if (data.size() < kHeaderSize)
    throw DataError("NLSH: truncated header: expected at least " + std::to_string(kHeaderSize) + " bytes, got " +
                    std::to_string(data.size()));
  detail::Reader r(data);
  const char* magic = r.take(4);
  if (std::memcmp(magic, kMagic.data(), 4) != 0) throw DataError("NLSH: bad magic (not an NLSH file)");
  const auto version = r.u16();
  if (version != kVersion)
    throw DataError("NLSH: unsupported version " + std::to_string(version) + " (expected " +
                    std::to_string(kVersion) + ")");
  const auto flags = r.u16();
  const auto n_pix = r.u32();
  const auto n_bins = r.u32();
  const std::size_t expected = file_size_for(n_pix, n_bins);
  if (data.size() != expected)
    throw DataError("NLSH: length mismatch: header implies " + std::to_string(expected) + " bytes, got " +
                    std::to_string(data.size()));
  if (n_pix == 0 || n_bins == 0) throw DataError("NLSH: empty frame");

  PixelArrayFrame f;
  const double bin_width = r.f64();
  const double t0 = r.f64();
  if (!(bin_width > 0.0) || !std::isfinite(t0)) throw DataError("NLSH: invalid bin geometry");
  f.meta.person_id = r.u8();
  f.meta.position_index = r.u8();
  f.meta.illumination_id = r.u8();
  const auto clothing = r.u8();
  if (clothing > 1) throw DataError("NLSH: invalid clothing_mode " + std::to_string(clothing));
  f.meta.clothing_mode = static_cast<ClothingMode>(clothing);
  f.meta.seed = r.u64();
  f.meta.noiseless = (flags & kFlagNoiseless) != 0;
  if (f.meta.position_index > 7) throw DataError("NLSH: position_index out of range");

  const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(static_cast<double>(n_pix))));
  if (side * side == n_pix) {
    f.rows = f.cols = static_cast<int>(side);
  } else {
    f.rows = 1;
    f.cols = static_cast<int>(n_pix);
  }
  f.histograms.assign(n_pix, TemporalHistogram(n_bins, bin_width, t0));
  f.hot_mask.assign(n_pix, 0);
  std::vector<std::uint8_t> seen(n_pix, 0);
  for (std::uint32_t i = 0; i < n_pix; ++i) {
    const auto idx = r.u16();
    if (idx >= n_pix || seen[idx]) throw DataError("NLSH: invalid or duplicate pixel index " + std::to_string(idx));
    seen[idx] = 1;
    f.hot_mask[idx] = r.u8() ? 1 : 0;
    (void)r.u8();
    auto& counts = f.histograms[idx].counts;
    for (std::uint32_t b = 0; b < n_bins; ++b) counts[b] = static_cast<double>(r.u32());
  }
  return f;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a temporary sibling and renames, so readers never observe a
/// partially written file.
inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_frame(const std::filesystem::path& path, const PixelArrayFrame& f) { write_file(path, encode(f)); }

inline PixelArrayFrame read_frame(const std::filesystem::path& path) {
  try {
    return decode(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

enum class FrameRole { measurement, background };

struct ManifestEntry {
  std::string file;
  FrameRole role = FrameRole::measurement;
  int person_id = 0;
  int position_index = 0;
  int illumination_id = 1;
};

/// Plain-text index of a dataset directory. Written last by the simulator,
/// so its presence marks a complete dataset.
struct Manifest {
  ClothingMode clothing_mode = ClothingMode::different;
  int illuminations = 5;
  std::uint64_t seed = 0;
  std::vector<PersonSpec> roster;
  std::vector<ManifestEntry> entries;

  std::size_t count(FrameRole role) const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.role == role;
    return n;
  }
};

inline constexpr const char* kManifestName = "manifest.txt";

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "nlosid-manifest 1\n";
  out << "clothing_mode " << to_string(m.clothing_mode) << "\n";
  out << "illuminations " << m.illuminations << "\n";
  out << "seed " << m.seed << "\n";
  out << "# person id height shoulder_width torso_depth head_radius clothing_albedo skin_albedo\n";
  for (const auto& p : m.roster)
    out << "person " << p.person_id << ' ' << p.height << ' ' << p.shoulder_width << ' ' << p.torso_depth << ' '
        << p.head_radius << ' ' << p.clothing_albedo << ' ' << p.skin_albedo << "\n";
  out << "counts " << m.count(FrameRole::measurement) << ' ' << m.count(FrameRole::background) << "\n";
  out << "# frame role person position illumination file\n";
  for (const auto& e : m.entries) {
    out << "frame " << (e.role == FrameRole::background ? "background" : "measurement") << ' ' << e.person_id << ' '
        << (e.position_index ? std::string(kPositionNames[e.position_index - 1]) : std::string("-")) << ' '
        << e.illumination_id << ' ' << e.file << "\n";
  }
  return out.str();
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  long declared_meas = -1, declared_bg = -1;
  bool header = false;
  auto fail = [&](const std::string& what) -> void {
    throw DataError("manifest line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "nlosid-manifest") {
      int v = 0;
      ls >> v;
      if (v != 1) fail("unsupported manifest version");
      header = true;
    } else if (tag == "clothing_mode") {
      std::string mode;
      ls >> mode;
      try {
        m.clothing_mode = parse_clothing_mode(mode);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    } else if (tag == "illuminations") {
      ls >> m.illuminations;
    } else if (tag == "seed") {
      ls >> m.seed;
    } else if (tag == "person") {
      PersonSpec p;
      ls >> p.person_id >> p.height >> p.shoulder_width >> p.torso_depth >> p.head_radius >> p.clothing_albedo >>
          p.skin_albedo;
      m.roster.push_back(p);
    } else if (tag == "counts") {
      ls >> declared_meas >> declared_bg;
    } else if (tag == "frame") {
      ManifestEntry e;
      std::string role, pos;
      ls >> role >> e.person_id >> pos >> e.illumination_id >> e.file;
      if (role == "background")
        e.role = FrameRole::background;
      else if (role != "measurement")
        fail("unknown role '" + role + "'");
      e.position_index = pos == "-" ? 0 : position_index(pos);
      if (pos != "-" && e.position_index == 0) fail("unknown position '" + pos + "'");
      if (ls.fail()) fail("malformed frame entry");
      m.entries.push_back(e);
      continue;
    } else {
      fail("unknown record '" + tag + "'");
    }
    if (ls.fail()) fail("malformed record '" + tag + "'");
  }
  if (!header) throw DataError("manifest: missing 'nlosid-manifest' header");
  if (declared_meas < 0 || declared_bg < 0) throw DataError("manifest: missing 'counts' record");
  if (static_cast<std::size_t>(declared_meas) != m.count(FrameRole::measurement) ||
      static_cast<std::size_t>(declared_bg) != m.count(FrameRole::background))
    throw DataError("manifest: incomplete, declares " + std::to_string(declared_meas) + " measurements and " +
                    std::to_string(declared_bg) + " backgrounds but lists " +
                    std::to_string(m.count(FrameRole::measurement)) + " and " +
                    std::to_string(m.count(FrameRole::background)));
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path))
    throw DataError("dataset '" + dir.string() + "' has no manifest (incomplete or not a dataset)");
  auto m = parse_manifest(read_file(path));
  for (const auto& e : m.entries)
    if (!std::filesystem::exists(dir / e.file))
      throw DataError("dataset '" + dir.string() + "' is missing listed frame '" + e.file + "'");
  return m;
}

}  // namespace nlosid::nlsh
