#pragma once

// Spherical projection of points onto the range-image grid, grouping into
// frustum regions (one region per pixel), range images and PPM rendering.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/io_util.hpp"
#include "frnet/scan_io.hpp"

namespace frnet {

struct ContinuousCoord {
  double u = 0.0;  // azimuth axis, [0, W]
  double v = 0.0;  // elevation axis, 0 at the upper field-of-view edge
};

// Continuous range-image coordinates of one point. Rows are measured from the
// upper edge of the field of view: v = (1 - (elevation - fov_down) / fov) * H.
inline ContinuousCoord continuous_coord(const Point& p, const SensorConfig& config) {
  const double d = p.depth();
  const double azimuth = std::atan2(p.y, p.x);
  const double elevation = std::asin(p.z / d);
  ContinuousCoord c;
  c.u = 0.5 * (1.0 - azimuth / std::numbers::pi) * config.width;
  c.v = (1.0 - (elevation - config.fov_down()) / config.fov()) * config.height;
  return c;
}

struct PixelCoord {
  int v = 0;
  int u = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

// Floor both axes, wrap azimuth modulo W, clamp elevation to [0, H).
inline PixelCoord discretize(ContinuousCoord c, int height, int width) {
  auto fu = static_cast<long long>(std::floor(c.u));
  auto fv = static_cast<long long>(std::floor(c.v));
  fu %= width;
  if (fu < 0) fu += width;
  if (fv < 0) fv = 0;
  if (fv > height - 1) fv = height - 1;
  return {static_cast<int>(fv), static_cast<int>(fu)};
}

// Per-point pixel coordinates plus the pixel -> members inverse map, stored
// CSR-style: members of pixel p are members[offsets[p] .. offsets[p+1]) in
// ascending point order.
class FrustumIndex {
 public:
  FrustumIndex() = default;

  FrustumIndex(int height, int width, std::vector<int> u, std::vector<int> v)
      : height_(height), width_(width), u_(std::move(u)), v_(std::move(v)) {
    if (u_.size() != v_.size()) throw ShapeError("FrustumIndex: u/v length mismatch");
    const std::size_t pixels = static_cast<std::size_t>(height_) * width_;
    offsets_.assign(pixels + 1, 0);
    for (std::size_t i = 0; i < u_.size(); ++i) {
      if (u_[i] < 0 || u_[i] >= width_ || v_[i] < 0 || v_[i] >= height_) {
        throw RangeError("FrustumIndex: point " + std::to_string(i) + " outside the grid");
      }
      ++offsets_[pixel_of(i) + 1];
    }
    for (std::size_t p = 0; p < pixels; ++p) offsets_[p + 1] += offsets_[p];
    members_.resize(u_.size());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < u_.size(); ++i) members_[cursor[pixel_of(i)]++] = i;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t num_points() const { return u_.size(); }
  std::size_t num_pixels() const { return static_cast<std::size_t>(height_) * width_; }

  int u(std::size_t i) const { return u_[i]; }
  int v(std::size_t i) const { return v_[i]; }
  std::span<const int> us() const { return u_; }
  std::span<const int> vs() const { return v_; }
  std::size_t pixel_of(std::size_t i) const { return static_cast<std::size_t>(v_[i]) * width_ + u_[i]; }

  std::span<const std::size_t> members(std::size_t pixel) const {
    return {members_.data() + offsets_[pixel], offsets_[pixel + 1] - offsets_[pixel]};
  }
  std::span<const std::size_t> members(int v, int u) const {
    return members(static_cast<std::size_t>(v) * width_ + u);
  }
  bool occupied(std::size_t pixel) const { return offsets_[pixel + 1] != offsets_[pixel]; }

  // Re-bins points onto a coarser grid by integer division of (v, u).
  FrustumIndex downsample(int factor, int height, int width) const {
    if (factor < 1) throw RangeError("downsample factor must be >= 1");
    std::vector<int> u(u_.size()), v(v_.size());
    for (std::size_t i = 0; i < u_.size(); ++i) {
      u[i] = u_[i] / factor;
      v[i] = v_[i] / factor;
    }
    return FrustumIndex(height, width, std::move(u), std::move(v));
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<int> u_;
  std::vector<int> v_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> members_;
};

inline FrustumIndex project(const PointCloud& cloud, const SensorConfig& config) {
  std::vector<int> u(cloud.size()), v(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    if (!(p.depth() > 0.0)) throw ProjectionError("point " + std::to_string(i) + " has zero depth");
    PixelCoord px = discretize(continuous_coord(p, config), config.height, config.width);
    u[i] = px.u;
    v[i] = px.v;
  }
  return FrustumIndex(config.height, config.width, std::move(u), std::move(v));
}

// ---------------------------------------------------------------------------

inline constexpr std::int64_t kNoPoint = -1;

struct RangeImage {
  int height = 0;
  int width = 0;
  std::vector<Point> point;           // representative point, meaningful where valid
  std::vector<Label> label;           // representative label or ignore
  std::vector<std::uint8_t> valid;    // 1 where the pixel holds a point
  std::vector<std::int64_t> source;   // index of the representative in the cloud, or kNoPoint

  std::size_t at(int v, int u) const { return static_cast<std::size_t>(v) * width + u; }
  std::size_t num_valid() const {
    std::size_t n = 0;
    for (auto m : valid) n += m;
    return n;
  }
};

// Representative of a pixel is its nearest member; equal depths resolve to the
// smallest point index because members are visited in ascending order.
inline RangeImage build_range_image(const PointCloud& cloud, const FrustumIndex& index,
                                    const SensorConfig& config) {
  RangeImage img;
  img.height = index.height();
  img.width = index.width();
  const std::size_t pixels = index.num_pixels();
  img.point.assign(pixels, Point{});
  img.label.assign(pixels, config.ignore_label);
  img.valid.assign(pixels, 0);
  img.source.assign(pixels, kNoPoint);
  for (std::size_t px = 0; px < pixels; ++px) {
    auto members = index.members(px);
    if (members.empty()) continue;
    std::size_t best = members.front();
    double best_depth = cloud.points[best].depth();
    for (std::size_t m : members.subspan(1)) {
      double d = cloud.points[m].depth();
      if (d < best_depth) {
        best = m;
        best_depth = d;
      }
    }
    img.point[px] = cloud.points[best];
    if (cloud.labels) img.label[px] = (*cloud.labels)[best];
    img.valid[px] = 1;
    img.source[px] = static_cast<std::int64_t>(best);
  }
  return img;
}

// Arithmetic mean of each occupied frustum (coordinates and intensity).
class FrustumMeans {
 public:
  FrustumMeans(const PointCloud& cloud, const FrustumIndex& index) : width_(index.width()) {
    means_.resize(index.num_pixels());
    for (std::size_t px = 0; px < index.num_pixels(); ++px) {
      auto members = index.members(px);
      if (members.empty()) continue;
      Point sum;
      for (std::size_t m : members) {
        const Point& p = cloud.points[m];
        sum.x += p.x;
        sum.y += p.y;
        sum.z += p.z;
        sum.intensity += p.intensity;
      }
      const double k = static_cast<double>(members.size());
      means_[px] = Point{sum.x / k, sum.y / k, sum.z / k, sum.intensity / k};
    }
  }

  const std::optional<Point>& at(std::size_t pixel) const { return means_[pixel]; }
  const std::optional<Point>& at(int v, int u) const { return means_[static_cast<std::size_t>(v) * width_ + u]; }

 private:
  int width_;
  std::vector<std::optional<Point>> means_;
};

inline FrustumMeans frustum_stats(const PointCloud& cloud, const FrustumIndex& index) {
  return FrustumMeans(cloud, index);
}

// ---------------------------------------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kInvalidColor{0, 0, 0};
inline constexpr Rgb kIgnoreColor{255, 255, 255};

inline std::map<Label, Rgb> default_palette(int num_classes) {
  static constexpr Rgb base[] = {{128, 64, 128}, {70, 70, 70},   {220, 220, 0},  {0, 0, 142},
                                 {107, 142, 35}, {220, 20, 60},  {255, 0, 0},    {0, 60, 100},
                                 {0, 80, 100},   {0, 0, 230},    {119, 11, 32},  {152, 251, 152},
                                 {70, 130, 180}, {250, 170, 30}, {190, 153, 153}, {153, 153, 153},
                                 {102, 102, 156}, {244, 35, 232}, {81, 0, 81},    {230, 150, 140}};
  std::map<Label, Rgb> palette;
  for (int c = 0; c < num_classes; ++c) {
    palette[static_cast<Label>(c)] = base[static_cast<std::size_t>(c) % std::size(base)];
  }
  return palette;
}

inline std::vector<std::uint8_t> encode_ppm(const RangeImage& image, const std::map<Label, Rgb>& palette,
                                            Label ignore_label) {
  std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * image.valid.size());
  for (std::size_t px = 0; px < image.valid.size(); ++px) {
    Rgb color = kInvalidColor;
    if (image.valid[px]) {
      Label l = image.label[px];
      if (l == ignore_label) {
        color = kIgnoreColor;
      } else {
        auto it = palette.find(l);
        if (it == palette.end()) throw DataError("palette has no color for class " + std::to_string(l));
        color = it->second;
      }
    }
    out.insert(out.end(), color.begin(), color.end());
  }
  return out;
}

inline void render_ppm(const RangeImage& image, const std::map<Label, Rgb>& palette, Label ignore_label,
                       const std::filesystem::path& path) {
  io::write_atomic(path, encode_ppm(image, palette, ignore_label));
}

}  // namespace frnet
