#pragma once

// Scene-level augmentations: FrustumMix (swap complementary frustum strips
// between two scans), Range-Interpolation (synthesize points in empty
// range-image pixels) and the usual global point transforms.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/rng.hpp"
#include "frnet/scan_io.hpp"

namespace frnet {

enum class MixMode { inclination, azimuth };

struct MixSpec {
  // Unset: choose per call with a fair coin from the seeded generator.
  std::optional<MixMode> mode;
  std::vector<int> num_areas_choices{3, 4, 5, 6};
  std::uint64_t rng_seed = 0;

  void validate(const SensorConfig& config) const {
    if (num_areas_choices.empty()) throw ConfigError("num_areas_choices must not be empty");
    for (int n : num_areas_choices) {
      if (n < 2 || n > config.height) {
        throw ConfigError("num_areas value " + std::to_string(n) + " outside [2, height]");
      }
    }
  }
};

namespace detail {

inline void append_point(PointCloud& out, const PointCloud& src, std::size_t i) {
  out.points.push_back(src.points[i]);
  out.labels->push_back((*src.labels)[i]);
}

inline void require_labeled(const PointCloud& a, const PointCloud& b) {
  if (!a.labeled() || !b.labeled()) throw DataError("frustum_mix requires labeled scans");
  a.validate();
  b.validate();
}

}  // namespace detail

// Strip boundaries floor(i * H / n), i = 0..n, computed in integers.
inline std::vector<int> strip_bounds(int height, int num_areas) {
  std::vector<int> bounds(static_cast<std::size_t>(num_areas) + 1);
  for (int i = 0; i <= num_areas; ++i) {
    bounds[static_cast<std::size_t>(i)] = static_cast<int>((static_cast<long long>(i) * height) / num_areas);
  }
  return bounds;
}

// Rows split into num_areas strips; even strips are taken from a, odd strips
// from b. Output keeps strip order, and source order within a strip.
inline PointCloud mix_inclination(const PointCloud& a, const PointCloud& b, const SensorConfig& config,
                                  int num_areas) {
  detail::require_labeled(a, b);
  const FrustumIndex ia = project(a, config);
  const FrustumIndex ib = project(b, config);
  const auto bounds = strip_bounds(config.height, num_areas);
  PointCloud out;
  out.labels.emplace();
  for (int s = 0; s < num_areas; ++s) {
    const int start = bounds[static_cast<std::size_t>(s)];
    const int end = bounds[static_cast<std::size_t>(s) + 1];
    const bool from_a = (s % 2 == 0);
    const PointCloud& src = from_a ? a : b;
    const FrustumIndex& idx = from_a ? ia : ib;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (idx.v(i) >= start && idx.v(i) < end) detail::append_point(out, src, i);
    }
  }
  return out;
}

// Columns [start, start + W/2) come from b, the complement from a.
inline PointCloud mix_azimuth(const PointCloud& a, const PointCloud& b, const SensorConfig& config, int start) {
  detail::require_labeled(a, b);
  const int half = config.width / 2;
  if (start < 0 || start >= half) throw RangeError("azimuth start must lie in [0, W/2)");
  const int end = start + half;
  const FrustumIndex ia = project(a, config);
  const FrustumIndex ib = project(b, config);
  PointCloud out;
  out.labels.emplace();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ia.u(i) < start || ia.u(i) >= end) detail::append_point(out, a, i);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (ib.u(i) >= start && ib.u(i) < end) detail::append_point(out, b, i);
  }
  return out;
}

inline PointCloud frustum_mix(const PointCloud& a, const PointCloud& b, const SensorConfig& config,
                              const MixSpec& spec) {
  detail::require_labeled(a, b);
  spec.validate(config);
  Rng rng(spec.rng_seed);
  MixMode mode;
  if (spec.mode) {
    mode = *spec.mode;
  } else {
    mode = rng.uniform() > 0.5 ? MixMode::inclination : MixMode::azimuth;
  }
  if (mode == MixMode::inclination) {
    int n = spec.num_areas_choices[rng.uniform_int(spec.num_areas_choices.size())];
    return mix_inclination(a, b, config, n);
  }
  int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config.width / 2)));
  return mix_azimuth(a, b, config, start);
}

// ---------------------------------------------------------------------------

enum class InterpDirection { horizontal, vertical };

struct InterpolationResult {
  PointCloud cloud;  // originals first, synthesized points appended
  std::size_t interpolated = 0;
};

// Single row-major pass over the range image. An empty pixel whose two
// neighbors along the chosen direction are both occupied receives the average
// of the two representatives (all four channels); the label is the shared
// neighbor label or ignore_label when they disagree. Filled pixels count as
// occupied for the rest of the pass. Unlabeled clouds stay unlabeled.
inline InterpolationResult range_interpolate(const PointCloud& cloud, const SensorConfig& config,
                                             InterpDirection direction) {
  cloud.validate();
  const FrustumIndex index = project(cloud, config);
  RangeImage img = build_range_image(cloud, index, config);
  InterpolationResult result;
  result.cloud = cloud;
  const int h = img.height;
  const int w = img.width;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t px = img.at(y, x);
      if (img.valid[px]) continue;
      std::size_t first, second;
      if (direction == InterpDirection::horizontal) {
        if (x - 1 < 0 || x + 1 >= w) continue;
        first = img.at(y, x - 1);
        second = img.at(y, x + 1);
      } else {
        if (y - 1 < 0 || y + 1 >= h) continue;
        first = img.at(y - 1, x);
        second = img.at(y + 1, x);
      }
      if (!img.valid[first] || !img.valid[second]) continue;
      const Point& p = img.point[first];
      const Point& q = img.point[second];
      Point mid{(p.x + q.x) / 2.0, (p.y + q.y) / 2.0, (p.z + q.z) / 2.0, (p.intensity + q.intensity) / 2.0};
      Label label = img.label[first] == img.label[second] ? img.label[first] : config.ignore_label;
      result.cloud.points.push_back(mid);
      if (result.cloud.labels) result.cloud.labels->push_back(label);
      img.point[px] = mid;
      img.label[px] = label;
      img.valid[px] = 1;
      ++result.interpolated;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Global transforms. Only coordinates change; intensity and labels carry
// through untouched except for Drop, which removes whole points.

struct RotateZ {
  double theta;
};
struct FlipX {};
struct FlipY {};
struct Scale {
  double factor;
};
struct Jitter {
  double sigma;
  std::uint64_t seed;
};
struct Drop {
  double probability;
  std::uint64_t seed;
};

using GlobalOp = std::variant<RotateZ, FlipX, FlipY, Scale, Jitter, Drop>;

inline PointCloud global_transform(const PointCloud& cloud, const GlobalOp& op) {
  PointCloud out = cloud;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, RotateZ>) {
          if (!std::isfinite(o.theta)) throw RangeError("rotation angle must be finite");
          const double c = std::cos(o.theta), s = std::sin(o.theta);
          for (Point& p : out.points) {
            const double x = p.x, y = p.y;
            p.x = c * x - s * y;
            p.y = s * x + c * y;
          }
        } else if constexpr (std::is_same_v<T, FlipX>) {
          for (Point& p : out.points) p.x = -p.x;
        } else if constexpr (std::is_same_v<T, FlipY>) {
          for (Point& p : out.points) p.y = -p.y;
        } else if constexpr (std::is_same_v<T, Scale>) {
          if (!(o.factor > 0.0) || !std::isfinite(o.factor)) throw RangeError("scale factor must be > 0");
          for (Point& p : out.points) {
            p.x *= o.factor;
            p.y *= o.factor;
            p.z *= o.factor;
          }
        } else if constexpr (std::is_same_v<T, Jitter>) {
          if (!(o.sigma >= 0.0) || !std::isfinite(o.sigma)) throw RangeError("jitter sigma must be >= 0");
          Rng rng(o.seed);
          for (Point& p : out.points) {
            p.x += o.sigma * rng.normal();
            p.y += o.sigma * rng.normal();
            p.z += o.sigma * rng.normal();
          }
        } else if constexpr (std::is_same_v<T, Drop>) {
          if (!(o.probability >= 0.0 && o.probability < 1.0)) throw RangeError("drop probability must be in [0,1)");
          Rng rng(o.seed);
          out.points.clear();
          if (out.labels) out.labels->clear();
          for (std::size_t i = 0; i < cloud.size(); ++i) {
            if (rng.uniform() < o.probability) continue;
            out.points.push_back(cloud.points[i]);
            if (out.labels) out.labels->push_back((*cloud.labels)[i]);
          }
        }
      },
      op);
  return out;
}

}  // namespace frnet
