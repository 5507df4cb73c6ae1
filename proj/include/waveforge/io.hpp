#pragma once

// On-disk formats.
//
//   field       <dir>/field.bin       little-endian float64, row-major nt x nx
//               <dir>/field.json      domain, source, grid, boundary
//   wave speed  <dir>/wavespeed.bin   float64 speeds, row-major
//               <dir>/mask.bin        packed bits, row-major, LSB first
//               <dir>/wavespeed.json  grid metadata and mask counts
//   dataset     <dir>/manifest.json   configs, p0, split, shapes
//               <dir>/pairs.bin       per pair: input then target (Tx x nx each)
//               <dir>/ml_field.bin    coarse un-normalized field
//   checkpoint  "WFCKPT01" | u64 header length | JSON header | float64 payload

#include "waveforge/core.hpp"
#include "waveforge/dataset.hpp"
#include "waveforge/kinematics.hpp"
#include "waveforge/seqmodel.hpp"
#include "waveforge/wavegen.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace waveforge {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Raw bytes

namespace detail {

static_assert(std::endian::native == std::endian::little, "only little-endian hosts are supported");

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string pack_doubles(const double* data, std::size_t n) {
  std::string s(n * sizeof(double), '\0');
  std::memcpy(s.data(), data, s.size());
  return s;
}

inline std::vector<double> unpack_doubles(const std::string& bytes, std::size_t offset, std::size_t n,
                                          const std::string& what) {
  if (bytes.size() < offset + n * sizeof(double)) throw IoError(what + " is truncated");
  std::vector<double> out(n);
  std::memcpy(out.data(), bytes.data() + offset, n * sizeof(double));
  return out;
}

}  // namespace detail

inline void write_grid(const fs::path& path, const Grid& g) {
  detail::write_file(path, detail::pack_doubles(g.data(), static_cast<std::size_t>(g.size())));
}

inline Grid read_grid(const fs::path& path, std::size_t rows, std::size_t cols) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() != rows * cols * sizeof(double)) {
    throw IoError(path.string() + ": expected " + std::to_string(rows * cols) + " float64 values");
  }
  const auto v = detail::unpack_doubles(bytes, 0, rows * cols, path.string());
  return Eigen::Map<const Grid>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline std::string pack_bits(const BoolGrid& mask) {
  const auto n = static_cast<std::size_t>(mask.size());
  std::string out((n + 7) / 8, '\0');
  for (std::size_t k = 0; k < n; ++k)
    if (mask.data()[k]) out[k / 8] = static_cast<char>(static_cast<unsigned char>(out[k / 8]) | (1u << (k % 8)));
  return out;
}

inline BoolGrid unpack_bits(const std::string& bytes, std::size_t rows, std::size_t cols) {
  const std::size_t n = rows * cols;
  if (bytes.size() != (n + 7) / 8) throw IoError("packed mask has the wrong size");
  BoolGrid m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t k = 0; k < n; ++k) m.data()[k] = (static_cast<unsigned char>(bytes[k / 8]) >> (k % 8)) & 1u;
  return m;
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { detail::write_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// JSON mappings

inline void to_json(json& j, const DomainSpec& d) { j = {{"length", d.length}, {"wave_speed", d.wave_speed}}; }
inline void from_json(const json& j, DomainSpec& d) {
  d.length = j.at("length").get<double>();
  d.wave_speed = j.at("wave_speed").get<double>();
}

inline void to_json(json& j, const SourceSpec& s) {
  j = {{"location", s.location}, {"onset", s.onset},       {"amplitude", s.amplitude},
       {"width", s.width},       {"duration", s.duration},
       {"shape", s.shape == TimeShape::hann_burst ? "hann_burst" : "impulsive"}};
}
inline void from_json(const json& j, SourceSpec& s) {
  s.location = j.at("location").get<double>();
  s.onset = j.at("onset").get<double>();
  s.amplitude = j.at("amplitude").get<double>();
  s.width = j.at("width").get<double>();
  s.duration = j.value("duration", 1.0);
  const std::string shape = j.value("shape", "hann_burst");
  if (shape == "hann_burst") s.shape = TimeShape::hann_burst;
  else if (shape == "impulsive") s.shape = TimeShape::impulsive;
  else throw ConfigError("unknown source shape: " + shape);
}

inline void to_json(json& j, const GridSpec& g) { j = {{"nx", g.nx}, {"nt", g.nt}, {"dx", g.dx}, {"dt", g.dt}}; }
inline void from_json(const json& j, GridSpec& g) {
  g.nx = j.at("nx").get<std::size_t>();
  g.nt = j.at("nt").get<std::size_t>();
  g.dx = j.at("dx").get<double>();
  g.dt = j.at("dt").get<double>();
}

inline void to_json(json& j, const MaskThresholds& t) {
  j = {{"quiet", t.quiet}, {"floor", t.floor}, {"tolerance", t.tolerance}, {"direction_radius", t.direction_radius}, {"margin", t.margin}};
  if (t.reference_amplitude) j["reference_amplitude"] = *t.reference_amplitude;
}
inline void from_json(const json& j, MaskThresholds& t) {
  t = MaskThresholds{};
  t.quiet = j.value("quiet", t.quiet);
  t.floor = j.value("floor", t.floor);
  t.tolerance = j.value("tolerance", t.tolerance);
  t.direction_radius = j.value("direction_radius", t.direction_radius);
  t.margin = j.value("margin", t.margin);
  if (j.contains("reference_amplitude")) t.reference_amplitude = j.at("reference_amplitude").get<double>();
}

inline void to_json(json& j, const WindowConfig& w) { j = {{"tx", w.tx}, {"stride", w.stride}}; }
inline void from_json(const json& j, WindowConfig& w) {
  w.tx = j.at("tx").get<std::size_t>();
  w.stride = j.value("stride", std::size_t{1});
}

inline void to_json(json& j, const Architecture& a) {
  j = {{"state_size", a.state_size}, {"hidden", a.hidden}, {"stateful", a.stateful}};
}
inline void from_json(const json& j, Architecture& a) {
  a.state_size = j.at("state_size").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.stateful = j.value("stateful", true);
}

// ---------------------------------------------------------------------------
// Pressure fields

inline void save_field(const fs::path& dir, const PressureField& f, Boundary boundary) {
  fs::create_directories(dir);
  write_grid(dir / "field.bin", f.values);
  write_json(dir / "field.json", {{"schema_version", kSchemaVersion},
                                  {"kind", "pressure_field"},
                                  {"layout", "float64 little-endian, row-major time x space"},
                                  {"domain", f.domain},
                                  {"source", f.source},
                                  {"grid", f.grid},
                                  {"boundary", to_string(boundary)},
                                  {"peak", f.peak()}});
}

inline PressureField load_field(const fs::path& dir, Boundary* boundary = nullptr) {
  const json meta = read_json(dir / "field.json");
  if (meta.value("schema_version", 0) != kSchemaVersion) throw IoError(dir.string() + ": unsupported field schema");
  PressureField f;
  try {
    f.domain = meta.at("domain").get<DomainSpec>();
    f.source = meta.at("source").get<SourceSpec>();
    f.grid = meta.at("grid").get<GridSpec>();
    if (boundary) *boundary = boundary_from_string(meta.value("boundary", "rigid"));
  } catch (const json::exception& e) {
    throw IoError(dir.string() + "/field.json: " + e.what());
  }
  f.values = read_grid(dir / "field.bin", f.grid.nt, f.grid.nx);
  return f;
}

inline void save_wavespeed(const fs::path& dir, const WaveSpeedField& ws, const MaskThresholds& th) {
  fs::create_directories(dir);
  write_grid(dir / "wavespeed.bin", ws.speeds);
  detail::write_file(dir / "mask.bin", pack_bits(ws.mask));
  write_json(dir / "wavespeed.json", {{"schema_version", kSchemaVersion},
                                      {"kind", "wave_speed"},
                                      {"layout", "speeds float64 row-major; mask packed bits row-major LSB first"},
                                      {"domain", ws.domain},
                                      {"grid", ws.grid},
                                      {"thresholds", th},
                                      {"unmasked_cells", ws.mask.count()},
                                      {"mean_unmasked_speed", mean_unmasked_speed(ws)}});
}

inline WaveSpeedField load_wavespeed(const fs::path& dir) {
  const json meta = read_json(dir / "wavespeed.json");
  WaveSpeedField ws;
  ws.domain = meta.at("domain").get<DomainSpec>();
  ws.grid = meta.at("grid").get<GridSpec>();
  ws.speeds = read_grid(dir / "wavespeed.bin", ws.grid.nt, ws.grid.nx);
  ws.mask = unpack_bits(detail::read_file(dir / "mask.bin"), ws.grid.nt, ws.grid.nx);
  return ws;
}

// ---------------------------------------------------------------------------
// Datasets

inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json pairs = json::array();
  std::string payload;
  for (const auto& p : ds.pairs) {
    pairs.push_back({{"origin_step", p.origin_step}, {"origin_time", p.origin_time}});
    payload += detail::pack_doubles(p.input.data(), static_cast<std::size_t>(p.input.size()));
    payload += detail::pack_doubles(p.target.data(), static_cast<std::size_t>(p.target.size()));
  }
  detail::write_file(dir / "pairs.bin", payload);
  write_grid(dir / "ml_field.bin", ds.ml_field.values);
  write_json(dir / "manifest.json", {{"schema_version", kSchemaVersion},
                                     {"kind", "dataset"},
                                     {"p0", ds.norm.p0},
                                     {"factor", ds.factor},
                                     {"window", ds.window},
                                     {"nx", ds.ml_field.nx()},
                                     {"domain", ds.ml_field.domain},
                                     {"source", ds.ml_field.source},
                                     {"ml_grid", ds.ml_field.grid},
                                     {"pairs", pairs},
                                     {"train_indices", ds.train_indices},
                                     {"test_indices", ds.test_indices},
                                     {"test_names", ds.test_names}});
}

inline Dataset load_dataset(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (m.value("schema_version", 0) != kSchemaVersion) throw IoError(dir.string() + ": unsupported dataset schema");
  Dataset ds;
  try {
    ds.norm.p0 = m.at("p0").get<double>();
    ds.factor = m.at("factor").get<std::size_t>();
    ds.window = m.at("window").get<WindowConfig>();
    ds.ml_field.domain = m.at("domain").get<DomainSpec>();
    ds.ml_field.source = m.at("source").get<SourceSpec>();
    ds.ml_field.grid = m.at("ml_grid").get<GridSpec>();
    ds.train_indices = m.at("train_indices").get<std::vector<std::size_t>>();
    ds.test_indices = m.at("test_indices").get<std::vector<std::size_t>>();
    ds.test_names = m.at("test_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError(dir.string() + "/manifest.json: " + e.what());
  }
  ds.ml_field.values = read_grid(dir / "ml_field.bin", ds.ml_field.grid.nt, ds.ml_field.grid.nx);
  const std::string bytes = detail::read_file(dir / "pairs.bin");
  const std::size_t tx = ds.window.tx;
  const std::size_t nx = ds.ml_field.grid.nx;
  const std::size_t per = tx * nx;
  std::size_t off = 0;
  for (const auto& pj : m.at("pairs")) {
    SequencePair p;
    p.origin_step = pj.at("origin_step").get<std::size_t>();
    p.origin_time = pj.at("origin_time").get<double>();
    const auto in = detail::unpack_doubles(bytes, off, per, "pairs.bin");
    const auto tg = detail::unpack_doubles(bytes, off + per * sizeof(double), per, "pairs.bin");
    off += 2 * per * sizeof(double);
    p.input = Eigen::Map<const Grid>(in.data(), static_cast<Eigen::Index>(tx), static_cast<Eigen::Index>(nx));
    p.target = Eigen::Map<const Grid>(tg.data(), static_cast<Eigen::Index>(tx), static_cast<Eigen::Index>(nx));
    ds.pairs.push_back(std::move(p));
  }
  if (off != bytes.size()) throw IoError(dir.string() + "/pairs.bin: size does not match the manifest");
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'W', 'F', 'C', 'K', 'P', 'T', '0', '1'};

inline std::string checkpoint_bytes(const ModelParams& p, const json& extra) {
  json header = extra;
  header["schema_version"] = kSchemaVersion;
  header["layers"] = json::array();
  for (const auto& l : p.layers) header["layers"].push_back({{"input", l.W.cols()}, {"hidden", l.hidden()}});
  header["state_size"] = p.state_size();
  header["parameter_count"] = p.parameter_count();
  header["layout"] = "float64 little-endian; per layer W(4H x in), U(4H x H), b(4H) column-major; head W, b";
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += h;
  const Vector flat = p.flatten();
  out += detail::pack_doubles(flat.data(), static_cast<std::size_t>(flat.size()));
  return out;
}

inline void save_checkpoint(const fs::path& path, const ModelParams& p, const json& extra = json::object()) {
  detail::write_file(path, checkpoint_bytes(p, extra));
}

struct Checkpoint {
  ModelParams params;
  json header;
};

inline Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (bytes.size() < 16 + len) throw IoError(path.string() + ": truncated header");
  Checkpoint ck;
  try {
    ck.header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": corrupt header: " + e.what());
  }
  if (ck.header.value("schema_version", 0) != kSchemaVersion) throw IoError(path.string() + ": unsupported schema");
  const auto nx = ck.header.at("state_size").get<Eigen::Index>();
  for (const auto& lj : ck.header.at("layers")) {
    const auto in = lj.at("input").get<Eigen::Index>();
    const auto h = lj.at("hidden").get<Eigen::Index>();
    ck.params.layers.push_back({Matrix(4 * h, in), Matrix(4 * h, h), Vector(4 * h)});
  }
  require(!ck.params.layers.empty(), "checkpoint has no layers");
  ck.params.head_W.resize(nx, ck.params.layers.back().hidden());
  ck.params.head_b.resize(nx);
  const std::size_t n = ck.params.parameter_count();
  if (bytes.size() != 16 + len + n * sizeof(double)) throw IoError(path.string() + ": payload size mismatch");
  const auto flat = detail::unpack_doubles(bytes, 16 + len, n, path.string());
  ck.params.assign(Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(n)));
  check_shapes(ck.params);
  return ck;
}

}  // namespace waveforge
