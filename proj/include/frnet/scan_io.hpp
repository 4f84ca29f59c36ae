#pragma once

// SemanticKITTI-layout scans and labels, the synthetic scene generator used as
// a test fixture, and the flat `key = value` run configuration.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/io_util.hpp"
#include "frnet/rng.hpp"

namespace frnet {

using Label = std::uint32_t;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  double depth() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(intensity);
  }
  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;
  // One class id per point when present.
  std::optional<std::vector<Label>> labels;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool labeled() const { return labels.has_value(); }

  void validate() const {
    if (labels && labels->size() != points.size()) {
      throw DataError("label count " + std::to_string(labels->size()) + " != point count " +
                      std::to_string(points.size()));
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!points[i].finite()) throw DataError("non-finite point at index " + std::to_string(i));
    }
  }
};

struct SensorConfig {
  int height = 64;
  int width = 512;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  Label ignore_label = 255;
  int num_classes = 3;

  double fov_up() const { return fov_up_deg * std::numbers::pi / 180.0; }
  double fov_down() const { return fov_down_deg * std::numbers::pi / 180.0; }
  // Total vertical field of view |f_up| + |f_down| in radians.
  double fov() const { return std::abs(fov_up()) + std::abs(fov_down()); }

  void validate() const {
    if (height < 2) throw ConfigError("height must be >= 2");
    if (width < 4) throw ConfigError("width must be >= 4");
    if (!(fov_up_deg > fov_down_deg)) throw ConfigError("fov_up_deg must exceed fov_down_deg");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (ignore_label < static_cast<Label>(num_classes)) {
      throw ConfigError("ignore_label must lie outside [0, num_classes)");
    }
  }
};

// ---------------------------------------------------------------------------
// Binary scan / label files

inline PointCloud decode_scan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw FormatError("point file size " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + 16 * i;
    Point& q = cloud.points[i];
    q.x = io::get_f32(p);
    q.y = io::get_f32(p + 4);
    q.z = io::get_f32(p + 8);
    q.intensity = io::get_f32(p + 12);
    if (!std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(q.z)) {
      throw DataError("non-finite coordinate at point index " + std::to_string(i));
    }
  }
  return cloud;
}

// Semantic class is the low 16 bits of each word; the high half carries the
// instance id and is discarded.
inline std::vector<Label> decode_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) {
    throw FormatError("label file size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  }
  std::vector<Label> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = io::get_u32(bytes.data() + 4 * i) & 0xFFFFu;
  return labels;
}

inline std::vector<Label> read_labels(const std::filesystem::path& path) {
  return decode_labels(io::read_bytes(path));
}

inline PointCloud read_scan(const std::filesystem::path& path_points,
                            const std::optional<std::filesystem::path>& path_labels = std::nullopt) {
  PointCloud cloud = decode_scan(io::read_bytes(path_points));
  if (path_labels) {
    auto bytes = io::read_bytes(*path_labels);
    if (bytes.size() != 4 * cloud.size()) {
      throw FormatError("label file holds " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(4 * cloud.size()));
    }
    cloud.labels = decode_labels(bytes);
  }
  return cloud;
}

inline std::vector<std::uint8_t> encode_labels(std::span<const Label> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(4 * labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0xFFFFu) {
      throw RangeError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " does not fit in 16 bits");
    }
    io::put_u32(out, labels[i]);
  }
  return out;
}

inline void write_labels(std::span<const Label> labels, const std::filesystem::path& path) {
  io::write_atomic(path, encode_labels(labels));
}

inline std::vector<std::uint8_t> encode_scan(const PointCloud& cloud) {
  std::vector<std::uint8_t> out;
  out.reserve(16 * cloud.size());
  for (const Point& p : cloud.points) {
    io::put_f32(out, static_cast<float>(p.x));
    io::put_f32(out, static_cast<float>(p.y));
    io::put_f32(out, static_cast<float>(p.z));
    io::put_f32(out, static_cast<float>(p.intensity));
  }
  return out;
}

inline void write_scan(const PointCloud& cloud, const std::filesystem::path& path) {
  io::write_atomic(path, encode_scan(cloud));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum SynthClass : Label { kGround = 0, kWall = 1, kPole = 2 };

// Deterministic street-like scene seen from a sensor 1.7 m above a flat
// ground: ground returns (class 0), a few straight vertical walls (class 1)
// and thin poles (class 2). Poles stand in front of walls so that some pixels
// hold points of both classes. Every elevation is kept inside the configured
// field of view by pulling the z coordinate onto the nearest admissible ray.
inline PointCloud synth_scene(std::uint64_t seed, std::size_t n_points, const SensorConfig& config) {
  constexpr double kSensorHeight = 1.7;
  constexpr double kPi = std::numbers::pi;
  Rng rng(seed);

  struct Wall {
    double azimuth, distance, half_length;
  };
  struct Pole {
    double x, y, radius;
  };
  std::vector<Wall> walls(4);
  for (std::size_t k = 0; k < walls.size(); ++k) {
    walls[k].azimuth = -kPi + (static_cast<double>(k) + rng.uniform(0.2, 0.8)) * (2.0 * kPi / walls.size());
    walls[k].distance = rng.uniform(10.0, 18.0);
    walls[k].half_length = rng.uniform(4.0, 8.0);
  }
  std::vector<Pole> poles(6);
  for (std::size_t k = 0; k < poles.size(); ++k) {
    // Alternate poles in front of a wall and free-standing ones.
    const Wall& w = walls[k % walls.size()];
    double az = (k % 2 == 0) ? w.azimuth + rng.uniform(-0.15, 0.15) : rng.uniform(-kPi, kPi);
    double r = rng.uniform(5.0, 9.0);
    poles[k] = {r * std::cos(az), r * std::sin(az), rng.uniform(0.08, 0.15)};
  }

  const double up = config.fov_up();
  const double down = config.fov_down();
  const double margin = std::min(1e-3, 0.25 * (up - down));
  double ground_min = 3.0;
  if (down < 0.0) ground_min = std::max(ground_min, 1.02 * kSensorHeight / std::tan(-down));

  PointCloud cloud;
  cloud.points.reserve(n_points);
  cloud.labels.emplace();
  cloud.labels->reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    double pick = rng.uniform();
    Point p;
    Label label;
    if (pick < 0.5) {
      double az = rng.uniform(-kPi, kPi);
      double r = rng.uniform(ground_min, ground_min + 30.0);
      p = {r * std::cos(az), r * std::sin(az), -kSensorHeight + 0.02 * rng.normal(), 0.0};
      p.intensity = std::clamp(0.25 + 0.08 * rng.normal(), 0.0, 1.0);
      label = kGround;
    } else if (pick < 0.85) {
      const Wall& w = walls[rng.uniform_int(walls.size())];
      double t = rng.uniform(-w.half_length, w.half_length);
      double c = std::cos(w.azimuth), s = std::sin(w.azimuth);
      p = {w.distance * c - t * s, w.distance * s + t * c, rng.uniform(-kSensorHeight, 1.5), 0.0};
      p.intensity = std::clamp(0.5 + 0.08 * rng.normal(), 0.0, 1.0);
      label = kWall;
    } else {
      const Pole& pl = poles[rng.uniform_int(poles.size())];
      double toward = std::atan2(pl.y, pl.x) + kPi;
      double a = toward + rng.uniform(-0.5 * kPi, 0.5 * kPi);
      p = {pl.x + pl.radius * std::cos(a), pl.y + pl.radius * std::sin(a), rng.uniform(-kSensorHeight, 2.5), 0.0};
      p.intensity = std::clamp(0.75 + 0.08 * rng.normal(), 0.0, 1.0);
      label = kPole;
    }
    double rho = std::hypot(p.x, p.y);
    double elev = std::atan2(p.z, rho);
    double clamped = std::clamp(elev, down + margin, up - margin);
    if (clamped != elev) p.z = rho * std::tan(clamped);
    cloud.points.push_back(p);
    cloud.labels->push_back(label);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  SensorConfig sensor;
  std::uint64_t seed = 0;
  // Raw value of every key seen (last occurrence wins).
  std::map<std::string, std::string> values;
  std::vector<std::string> warnings;

  bool has(const std::string& key) const { return values.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline double parse_double(const std::string& key, std::string_view text) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(out)) {
    throw ConfigError("unparsable real for '" + key + "': '" + std::string(text) + "'");
  }
  return out;
}

inline long long parse_int(const std::string& key, std::string_view text) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("unparsable integer for '" + key + "': '" + std::string(text) + "'");
  }
  return out;
}

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // sensor / scan io
      "height", "width", "fov_up_deg", "fov_down_deg", "ignore_label", "num_classes", "seed",
      // augmentation
      "mix_num_areas", "mix_mode", "mix_seed", "interp_direction",
      // model
      "stages", "stage_channels", "encoder_channels", "frustum_channels", "head_channels", "interp", "strides",
      // training
      "lambda_frustum", "lr", "momentum", "max_grad_norm", "lr_cosine", "epochs", "toy_points",
      // knn post-processing
      "knn_k", "knn_window", "knn_cutoff"};
  return keys;
}

}  // namespace detail

inline double RunConfig::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : detail::parse_double(key, it->second);
}

inline long long RunConfig::get_int(const std::string& key, long long fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : detail::parse_int(key, it->second);
}

inline bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("unparsable boolean for '" + key + "': '" + v + "'");
}

inline std::vector<int> RunConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  std::vector<int> out;
  std::string_view rest = it->second;
  while (true) {
    auto comma = rest.find(',');
    std::string_view item = detail::trim(rest.substr(0, comma));
    if (item.empty()) throw ConfigError("empty list item in '" + key + "'");
    out.push_back(static_cast<int>(detail::parse_int(key, item)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!detail::known_config_keys().count(key)) {
      cfg.warnings.push_back("unknown config key '" + key + "' (line " + std::to_string(line_no) + ")");
    }
    cfg.values[key] = value;
  }

  for (const char* key : {"height", "width", "fov_up_deg", "fov_down_deg"}) {
    if (!cfg.has(key)) throw ConfigError(std::string("missing mandatory key '") + key + "'");
  }
  SensorConfig& s = cfg.sensor;
  s.height = static_cast<int>(cfg.get_int("height", s.height));
  s.width = static_cast<int>(cfg.get_int("width", s.width));
  s.fov_up_deg = cfg.get_double("fov_up_deg", s.fov_up_deg);
  s.fov_down_deg = cfg.get_double("fov_down_deg", s.fov_down_deg);
  long long ignore = cfg.get_int("ignore_label", s.ignore_label);
  if (ignore < 0 || ignore > 0xFFFF) throw ConfigError("ignore_label must be in [0, 65535]");
  s.ignore_label = static_cast<Label>(ignore);
  s.num_classes = static_cast<int>(cfg.get_int("num_classes", s.num_classes));
  long long seed = cfg.get_int("seed", 0);
  if (seed < 0) throw ConfigError("seed must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  s.validate();
  return cfg;
}

inline RunConfig read_config(const std::filesystem::path& path) { return parse_config(io::read_text(path)); }

}  // namespace frnet
