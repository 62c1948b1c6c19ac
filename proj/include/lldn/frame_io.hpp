#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/scene.hpp"

namespace lldn {

// Frame file layout (all integers and floats little-endian):
//   magic "KLNF1"
//   u32 rows, u32 cols, f64 cell_dx, f64 cell_dy, f64 x0, f64 y0
//   u32 point_count, u32 config_len
//   config blob: key=value text
//   points: point_count x 5 f32 (x, y, z, intensity, reflectivity)
//   label raster: rows*cols bytes, row-major class ids
//   tags: u16 condition bitmask

inline constexpr char kFrameMagic[5] = {'K', 'L', 'N', 'F', '1'};

namespace io_detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_f64(std::string& out, double v) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string context;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError(context + ": truncated record");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

// shortest text that parses back to the identical double
inline std::string fmt_double(double v) {
  char tmp[64];
  auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof tmp, v);
  return std::string(tmp, ptr);
}

}  // namespace io_detail

// key=value text blob describing the generating scene configuration (the
// grid lives in the binary header, not here).
inline std::string scene_config_to_text(const SceneConfig& cfg) {
  using io_detail::fmt_double;
  std::ostringstream os;
  os << "lanes = " << cfg.lanes << "\n";
  os << "curve_radius = " << fmt_double(cfg.curve_radius) << "\n";
  os << "merge = " << (cfg.merge ? 1 : 0) << "\n";
  os << "merge_diverge = " << (cfg.merge_diverge ? 1 : 0) << "\n";
  os << "occluded = " << cfg.occluded << "\n";
  os << "night = " << (cfg.night ? 1 : 0) << "\n";
  os << "points = " << cfg.points << "\n";
  os << "mark_width = " << fmt_double(cfg.mark_width) << "\n";
  os << "lane_spacing = " << fmt_double(cfg.lane_spacing) << "\n";
  os << "offsets =";
  for (std::size_t i = 0; i < cfg.lane_offsets.size(); ++i)
    os << (i ? "," : " ") << fmt_double(cfg.lane_offsets[i]);
  os << "\n";
  return os.str();
}

inline SceneConfig scene_config_from_text(const std::string& text, const GridSpec& grid) {
  SceneConfig cfg;
  cfg.grid = grid;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t");
      std::size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "lanes") cfg.lanes = std::stoi(val);
    else if (key == "curve_radius") cfg.curve_radius = std::stod(val);
    else if (key == "merge") cfg.merge = val != "0";
    else if (key == "merge_diverge") cfg.merge_diverge = val != "0";
    else if (key == "occluded") cfg.occluded = std::stoi(val);
    else if (key == "night") cfg.night = val != "0";
    else if (key == "points") cfg.points = std::stoi(val);
    else if (key == "mark_width") cfg.mark_width = std::stod(val);
    else if (key == "lane_spacing") cfg.lane_spacing = std::stod(val);
    else if (key == "offsets") {
      cfg.lane_offsets.clear();
      std::istringstream vs(val);
      std::string part;
      while (std::getline(vs, part, ','))
        if (!part.empty()) cfg.lane_offsets.push_back(std::stod(part));
    } else {
      throw DataError("frame config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline std::string frame_to_bytes(const Frame& frame) {
  using namespace io_detail;
  std::string out;
  out.append(kFrameMagic, 5);
  const GridSpec& g = frame.label.grid;
  put_u32(out, static_cast<std::uint32_t>(g.rows));
  put_u32(out, static_cast<std::uint32_t>(g.cols));
  put_f64(out, g.cell_dx);
  put_f64(out, g.cell_dy);
  put_f64(out, g.x0);
  put_f64(out, g.y0);
  put_u32(out, static_cast<std::uint32_t>(frame.cloud.points.size()));
  std::string cfg = scene_config_to_text(frame.config);
  cfg += "seed = " + std::to_string(frame.seed) + "\n";
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const Point& p : frame.cloud.points) {
    put_f32(out, p.x);
    put_f32(out, p.y);
    put_f32(out, p.z);
    put_f32(out, p.intensity);
    put_f32(out, p.reflectivity);
  }
  out.append(reinterpret_cast<const char*>(frame.label.cells.data()), frame.label.cells.size());
  put_u16(out, frame.tags.bits);
  return out;
}

inline Frame frame_from_bytes(const std::string& buf, const std::string& context) {
  using namespace io_detail;
  if (buf.size() < 5 || std::memcmp(buf.data(), kFrameMagic, 5) != 0)
    throw DataError(context + ": bad magic '" + buf.substr(0, std::min<std::size_t>(5, buf.size())) +
                    "' (expected KLNF1)");
  Reader rd{buf, 5, context};
  GridSpec g;
  g.rows = static_cast<int>(rd.u32());
  g.cols = static_cast<int>(rd.u32());
  g.cell_dx = rd.f64();
  g.cell_dy = rd.f64();
  g.x0 = rd.f64();
  g.y0 = rd.f64();
  if (g.rows <= 0 || g.cols <= 0 || g.rows > 1 << 16 || g.cols > 1 << 16)
    throw DataError(context + ": implausible grid dims");
  std::uint32_t n_points = rd.u32();
  std::uint32_t cfg_len = rd.u32();
  std::string cfg_text = rd.bytes(cfg_len);

  Frame frame;
  std::string seed_line;
  {
    // the seed rides in the config blob; peel it off before parsing
    std::istringstream is(cfg_text);
    std::string line, rest;
    while (std::getline(is, line)) {
      if (line.rfind("seed", 0) == 0 && line.find('=') != std::string::npos) {
        frame.seed = std::stoull(line.substr(line.find('=') + 1));
      } else {
        rest += line + "\n";
      }
    }
    frame.config = scene_config_from_text(rest, g);
  }

  frame.cloud.points.resize(n_points);
  for (auto& p : frame.cloud.points) {
    p.x = rd.f32();
    p.y = rd.f32();
    p.z = rd.f32();
    p.intensity = rd.f32();
    p.reflectivity = rd.f32();
  }
  frame.label = LabelRaster(g);
  std::string raster = rd.bytes(static_cast<std::size_t>(g.rows) * static_cast<std::size_t>(g.cols));
  std::copy(raster.begin(), raster.end(), reinterpret_cast<char*>(frame.label.cells.data()));
  frame.tags.bits = rd.u16();
  return frame;
}

inline void write_frame(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  std::string bytes = frame_to_bytes(frame);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline Frame read_frame(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open frame file '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return frame_from_bytes(ss.str(), path.string());
}

// ---- dataset manifest -------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  bool train = true;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& e : entries) os << e.path << " " << (e.train ? "train" : "test") << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split;
    if (!(ls >> e.path >> split) || (split != "train" && split != "test"))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest line");
    e.train = split == "train";
    entries.push_back(e);
  }
  return entries;
}

// Loads every frame referenced by a manifest, split by tag.
struct Dataset {
  std::vector<Frame> train;
  std::vector<Frame> test;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  auto entries = read_manifest(dir / "manifest.txt");
  Dataset ds;
  for (const auto& e : entries) {
    Frame f = read_frame(dir / e.path);
    (e.train ? ds.train : ds.test).push_back(std::move(f));
  }
  return ds;
}

}  // namespace lldn
