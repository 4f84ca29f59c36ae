#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <numbers>
#include <set>

#include "frnet/geometry.hpp"
#include "frnet/rng.hpp"
#include "test_util.hpp"

using namespace frnet;
using frnet::testing::kitti;
using frnet::testing::TempDir;

namespace {

using Big = boost::multiprecision::cpp_bin_float_50;

ContinuousCoord oracle(const Point& p, const SensorConfig& c) {
  const Big x = p.x, y = p.y, z = p.z;
  const Big pi = boost::math::constants::pi<Big>();
  const Big d = sqrt(x * x + y * y + z * z);
  const Big up = Big(c.fov_up_deg) * pi / 180, down = Big(c.fov_down_deg) * pi / 180;
  const Big fov = abs(up) + abs(down);
  const Big u = Big(0.5) * (1 - atan2(y, x) / pi) * c.width;
  const Big v = (1 - (asin(z / d) - down) / fov) * c.height;
  return {static_cast<double>(u), static_cast<double>(v)};
}

}  // namespace

TEST(Projection, ForwardAxisPoint) {
  const SensorConfig c = kitti();
  ContinuousCoord cc = continuous_coord({10, 0, 0, 0}, c);
  EXPECT_NEAR(cc.u, 256.0, 1e-12);
  EXPECT_NEAR(cc.v, 64.0 * 3.0 / 28.0, 1e-12);
  EXPECT_EQ(discretize(cc, 64, 512), (PixelCoord{6, 256}));
}

TEST(Projection, LeftAxisPointIsQuarterTurn) {
  const SensorConfig c = kitti();
  EXPECT_EQ(discretize(continuous_coord({0, 10, 0, 0}, c), 64, 512).u, 128);
  EXPECT_EQ(discretize(continuous_coord({0, -10, 0, 0}, c), 64, 512).u, 384);
}

TEST(Projection, RearAxisWrapsToColumnZero) {
  const SensorConfig c = kitti();
  ContinuousCoord cc = continuous_coord({-10, 0, 0, 0}, c);
  // atan2(+0, -10) = pi gives u = 0; -0 gives u = W, which wraps to 0.
  EXPECT_EQ(discretize(cc, 64, 512).u, 0);
  EXPECT_EQ(discretize(continuous_coord({-10, -0.0, 0, 0}, c), 64, 512).u, 0);
}

TEST(Projection, UpperFovEdgeIsRowZero) {
  const SensorConfig c = kitti();
  Point p = frnet::testing::at_angles(0.3, c.fov_up(), 12.0);
  EXPECT_EQ(discretize(continuous_coord(p, c), 64, 512).v, 0);
  Point q = frnet::testing::at_angles(0.3, c.fov_down(), 12.0);
  EXPECT_EQ(discretize(continuous_coord(q, c), 64, 512).v, 63);
}

TEST(Projection, OutOfFovRowsClamp) {
  const SensorConfig c = kitti();
  EXPECT_EQ(discretize(continuous_coord({1, 0, 5, 0}, c), 64, 512).v, 0);
  EXPECT_EQ(discretize(continuous_coord({1, 0, -5, 0}, c), 64, 512).v, 63);
}

TEST(Projection, PixelCentresRoundTrip) {
  for (auto c : {kitti(), frnet::testing::grid(16, 64), frnet::testing::grid(4, 8)}) {
    for (int v = 0; v < c.height; ++v) {
      for (int u = 0; u < c.width; ++u) {
        Point p = frnet::testing::pixel_centre(c, v, u, 7.0);
        ASSERT_EQ(discretize(continuous_coord(p, c), c.height, c.width), (PixelCoord{v, u}));
      }
    }
  }
}

TEST(Projection, MatchesHighPrecisionOracle) {
  Rng rng(2024);
  const SensorConfig c = kitti();
  for (int i = 0; i < 2000; ++i) {
    Point p = frnet::testing::at_angles(rng.uniform(-3.14, 3.14), rng.uniform(c.fov_down(), c.fov_up()),
                                        rng.uniform(0.5, 80.0));
    ContinuousCoord got = continuous_coord(p, c), want = oracle(p, c);
    ASSERT_NEAR(got.u, want.u, 1e-9);
    ASSERT_NEAR(got.v, want.v, 1e-9);
    PixelCoord a = discretize(got, c.height, c.width), b = discretize(want, c.height, c.width);
    if (std::abs(want.u - std::round(want.u)) > 1e-9 && std::abs(want.v - std::round(want.v)) > 1e-9) {
      ASSERT_EQ(a, b);
    }
  }
}

TEST(Projection, AzimuthMonotoneClockwise) {
  const SensorConfig c = kitti();
  double prev = -1.0;
  for (int k = 1; k < 1000; ++k) {
    double az = std::numbers::pi - k * (2 * std::numbers::pi / 1000);
    double u = continuous_coord(frnet::testing::at_angles(az, 0.0, 5.0), c).u;
    EXPECT_GT(u, prev);
    prev = u;
  }
}

TEST(Projection, ZeroDepthRejected) {
  PointCloud cloud;
  cloud.points = {{1, 0, 0, 0}, {0, 0, 0, 0}};
  try {
    project(cloud, kitti());
    FAIL();
  } catch (const ProjectionError& e) {
    EXPECT_NE(std::string(e.what()).find("point 1"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------

TEST(FrustumIndex, PartitionsEveryPoint) {
  Rng rng(5);
  PointCloud cloud = frnet::testing::random_cloud(rng, 5000, 3);
  const SensorConfig c = kitti();
  FrustumIndex idx = project(cloud, c);
  std::vector<int> seen(cloud.size(), 0);
  std::size_t total = 0;
  for (std::size_t px = 0; px < idx.num_pixels(); ++px) {
    auto m = idx.members(px);
    total += m.size();
    EXPECT_EQ(idx.occupied(px), !m.empty());
    for (std::size_t k = 0; k < m.size(); ++k) {
      ++seen[m[k]];
      EXPECT_EQ(idx.pixel_of(m[k]), px);
      if (k > 0) {
        EXPECT_LT(m[k - 1], m[k]);
      }
    }
  }
  EXPECT_EQ(total, cloud.size());
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(FrustumIndex, RejectsOutOfGridCoordinates) {
  EXPECT_THROW(FrustumIndex(2, 2, {0, 2}, {0, 0}), RangeError);
  EXPECT_THROW(FrustumIndex(2, 2, {0}, {0, 1}), ShapeError);
}

TEST(FrustumIndex, DownsampleMergesBlocks) {
  FrustumIndex idx(4, 4, {0, 1, 3, 2}, {0, 1, 3, 0});
  FrustumIndex half = idx.downsample(2, 2, 2);
  EXPECT_EQ(std::vector<std::size_t>(half.members(0, 0).begin(), half.members(0, 0).end()),
            (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(half.members(0, 1).size(), 1u);
  EXPECT_EQ(half.members(1, 1).size(), 1u);
  EXPECT_TRUE(half.members(1, 0).empty());
}

// ---------------------------------------------------------------------------

TEST(RangeImage, NearestMemberRepresentsPixel) {
  const SensorConfig c = kitti();
  PointCloud cloud;
  cloud.points = {frnet::testing::pixel_centre(c, 10, 20, 9.0), frnet::testing::pixel_centre(c, 10, 20, 4.0),
                  frnet::testing::pixel_centre(c, 10, 20, 6.0), frnet::testing::pixel_centre(c, 30, 100, 2.0)};
  cloud.labels = std::vector<Label>{0, 1, 2, 0};
  FrustumIndex idx = project(cloud, c);
  RangeImage img = build_range_image(cloud, idx, c);
  EXPECT_EQ(img.num_valid(), 2u);
  EXPECT_EQ(img.source[img.at(10, 20)], 1);
  EXPECT_EQ(img.label[img.at(10, 20)], 1u);
  EXPECT_DOUBLE_EQ(img.point[img.at(10, 20)].depth(), 4.0);
  EXPECT_EQ(img.label[img.at(0, 0)], c.ignore_label);
  EXPECT_EQ(img.source[img.at(0, 0)], kNoPoint);
}

TEST(RangeImage, TiesGoToLowestIndex) {
  const SensorConfig c = kitti();
  PointCloud cloud;
  Point p = frnet::testing::pixel_centre(c, 5, 5, 3.0);
  cloud.points = {p, p};
  cloud.labels = std::vector<Label>{2, 1};
  RangeImage img = build_range_image(cloud, project(cloud, c), c);
  EXPECT_EQ(img.source[img.at(5, 5)], 0);
}

TEST(RangeImage, EmptyCloudIsAllInvalid) {
  const SensorConfig c = kitti();
  PointCloud cloud;
  RangeImage img = build_range_image(cloud, project(cloud, c), c);
  EXPECT_EQ(img.num_valid(), 0u);
  EXPECT_EQ(img.valid.size(), 64u * 512u);
}

TEST(FrustumMeans, AveragesMembers) {
  const SensorConfig c = kitti();
  PointCloud cloud;
  Point a = frnet::testing::pixel_centre(c, 3, 7, 4.0, 0.2);
  Point b = frnet::testing::pixel_centre(c, 3, 7, 8.0, 0.6);
  cloud.points = {a, b};
  FrustumIndex idx = project(cloud, c);
  FrustumMeans means = frustum_stats(cloud, idx);
  ASSERT_TRUE(means.at(3, 7).has_value());
  EXPECT_NEAR(means.at(3, 7)->x, (a.x + b.x) / 2, 1e-12);
  EXPECT_NEAR(means.at(3, 7)->z, (a.z + b.z) / 2, 1e-12);
  EXPECT_NEAR(means.at(3, 7)->intensity, 0.4, 1e-12);
  EXPECT_FALSE(means.at(0, 0).has_value());
}

// ---------------------------------------------------------------------------

TEST(Ppm, TwoByTwoImage) {
  RangeImage img;
  img.height = 2;
  img.width = 2;
  img.point.assign(4, Point{});
  img.label = {0, 255, 1, 0};
  img.valid = {1, 1, 0, 0};
  img.source = {0, 1, kNoPoint, kNoPoint};
  std::map<Label, Rgb> palette{{0, {255, 0, 0}}, {1, {0, 255, 0}}};
  auto bytes = encode_ppm(img, palette, 255);
  const std::string header = "P6\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 12);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  const std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<long>(header.size()), bytes.end());
  EXPECT_EQ(pixels, (std::vector<std::uint8_t>{0xFF, 0, 0, 0xFF, 0xFF, 0xFF, 0, 0, 0, 0, 0, 0}));
}

TEST(Ppm, MissingPaletteEntryIsError) {
  RangeImage img;
  img.height = 1;
  img.width = 1;
  img.point.assign(1, Point{});
  img.label = {7};
  img.valid = {1};
  img.source = {0};
  EXPECT_THROW(encode_ppm(img, default_palette(3), 255), DataError);
}

TEST(Ppm, RenderWritesFile) {
  const SensorConfig c = frnet::testing::grid(16, 64);
  PointCloud cloud = synth_scene(1, 500, c);
  RangeImage img = build_range_image(cloud, project(cloud, c), c);
  TempDir dir("ppm");
  render_ppm(img, default_palette(3), 255, dir / "a.ppm");
  auto bytes = io::read_bytes(dir / "a.ppm");
  EXPECT_EQ(bytes, encode_ppm(img, default_palette(3), 255));
  EXPECT_EQ(bytes.size(), std::string("P6\n64 16\n255\n").size() + 3u * 16u * 64u);
}
