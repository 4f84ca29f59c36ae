#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "frnet/error.hpp"
#include "frnet/io_util.hpp"
#include "frnet/rng.hpp"
#include "frnet/scan_io.hpp"
#include "test_util.hpp"

using namespace frnet;
using frnet::testing::TempDir;

namespace {

// Little-endian IEEE-754 bytes written out by hand, independent of io_util.
std::array<std::uint8_t, 4> f32_bytes(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  return {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8), static_cast<std::uint8_t>(bits >> 16),
          static_cast<std::uint8_t>(bits >> 24)};
}

void write_raw(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(ReadScan, DecodesHandEncodedPoints) {
  // (1,2,2,0.5) and (3,0,4,0.1) as raw words.
  const std::vector<std::uint8_t> bytes = {
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00, 0x3f,
      0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x40, 0xcd, 0xcc, 0xcc, 0x3d};
  TempDir dir("scan");
  write_raw(dir / "a.bin", bytes);
  PointCloud c = read_scan(dir / "a.bin");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_FALSE(c.labeled());
  EXPECT_DOUBLE_EQ(c.points[0].depth(), 3.0);
  EXPECT_DOUBLE_EQ(c.points[1].depth(), 5.0);
  EXPECT_DOUBLE_EQ(c.points[0].intensity, 0.5);
  EXPECT_EQ(c.points[1].intensity, static_cast<double>(0.1f));
}

TEST(ReadScan, EmptyFileGivesEmptyCloud) {
  TempDir dir("scan");
  write_raw(dir / "e.bin", {});
  EXPECT_EQ(read_scan(dir / "e.bin").size(), 0u);
}

TEST(ReadScan, RejectsTruncatedFile) {
  TempDir dir("scan");
  write_raw(dir / "t.bin", std::vector<std::uint8_t>(20, 0));
  EXPECT_THROW(read_scan(dir / "t.bin"), FormatError);
}

TEST(ReadScan, NonFiniteCoordinateNamesIndex) {
  std::vector<std::uint8_t> bytes;
  for (float f : {1.0f, 1.0f, 1.0f, 0.0f, 2.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f, 0.0f}) {
    auto b = f32_bytes(f);
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  try {
    decode_scan(bytes);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
}

TEST(ReadScan, LabelCountMustMatch) {
  TempDir dir("scan");
  PointCloud c;
  c.points = {{1, 0, 0, 0}, {0, 1, 0, 0}};
  write_scan(c, dir / "p.bin");
  write_labels(std::vector<Label>{1}, dir / "p.label");
  EXPECT_THROW(read_scan(dir / "p.bin", dir / "p.label"), FormatError);
}

TEST(ReadScan, MissingFileIsAnError) {
  EXPECT_THROW(read_scan("/nonexistent/frnet/none.bin"), Error);
}

TEST(Labels, KeepsLowSixteenBits) {
  const std::vector<std::uint8_t> word = {0x09, 0x00, 0x01, 0x00};  // 0x00010009
  auto labels = decode_labels(word);
  ASSERT_EQ(labels.size(), 1u);
  EXPECT_EQ(labels[0], 9u);
}

TEST(Labels, EncodesLittleEndianWords) {
  EXPECT_EQ(encode_labels(std::vector<Label>{0}), (std::vector<std::uint8_t>{0, 0, 0, 0}));
  EXPECT_EQ(encode_labels(std::vector<Label>{9}), (std::vector<std::uint8_t>{9, 0, 0, 0}));
  EXPECT_EQ(encode_labels(std::vector<Label>{0xABCD}), (std::vector<std::uint8_t>{0xCD, 0xAB, 0, 0}));
}

TEST(Labels, RejectsIdsBeyondSixteenBits) {
  EXPECT_THROW(encode_labels(std::vector<Label>{0x10000}), RangeError);
}

TEST(Labels, RoundTripThousandRandomIds) {
  Rng rng(11);
  std::vector<Label> ids(1000);
  for (auto& id : ids) id = static_cast<Label>(rng.uniform_int(0x10000));
  TempDir dir("labels");
  write_labels(ids, dir / "x.label");
  EXPECT_EQ(read_labels(dir / "x.label"), ids);
}

TEST(ScanRoundTrip, CoordinatesBitExactForFloatValues) {
  Rng rng(3);
  PointCloud c;
  c.labels.emplace();
  for (int i = 0; i < 200; ++i) {
    c.points.push_back({static_cast<float>(rng.uniform(-80, 80)), static_cast<float>(rng.uniform(-80, 80)),
                        static_cast<float>(rng.uniform(-5, 5)), static_cast<float>(rng.uniform())});
    c.labels->push_back(static_cast<Label>(rng.uniform_int(20)));
  }
  TempDir dir("rt");
  write_scan(c, dir / "s.bin");
  write_labels(*c.labels, dir / "s.label");
  PointCloud back = read_scan(dir / "s.bin", dir / "s.label");
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.labels, c.labels);
}

TEST(AtomicWrite, LeavesNoTemporaryBehind) {
  TempDir dir("atomic");
  io::write_atomic(dir / "f.txt", std::string_view("hello"));
  io::write_atomic(dir / "f.txt", std::string_view("world"));
  EXPECT_EQ(io::read_text(dir / "f.txt"), "world");
  std::size_t files = 0;
  for ([[maybe_unused]] auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
}

// ---------------------------------------------------------------------------

TEST(SynthScene, DeterministicPerSeed) {
  SensorConfig c = frnet::testing::kitti();
  PointCloud a = synth_scene(1, 100, c), b = synth_scene(1, 100, c);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
  PointCloud other = synth_scene(2, 100, c);
  EXPECT_NE(a.points, other.points);
}

TEST(SynthScene, ElevationsInsideFieldOfView) {
  for (auto c : {frnet::testing::kitti(), frnet::testing::grid(16, 64), frnet::testing::grid(4, 8)}) {
    PointCloud s = synth_scene(5, 3000, c);
    for (const Point& p : s.points) {
      double e = std::asin(p.z / p.depth());
      EXPECT_GE(e, c.fov_down());
      EXPECT_LE(e, c.fov_up());
    }
  }
  SensorConfig nus = frnet::testing::kitti();
  nus.height = 32;
  nus.width = 480;
  nus.fov_up_deg = 10;
  nus.fov_down_deg = -30;
  for (const Point& p : synth_scene(9, 2000, nus).points) {
    double e = std::asin(p.z / p.depth());
    EXPECT_GE(e, nus.fov_down());
    EXPECT_LE(e, nus.fov_up());
  }
}

TEST(SynthScene, GoldenClassHistogram) {
  PointCloud s = synth_scene(1, 300, frnet::testing::kitti());
  std::map<Label, int> hist;
  for (Label l : *s.labels) ++hist[l];
  ASSERT_EQ(hist.size(), 3u);
  // Frozen from the generator's first run.
  EXPECT_EQ(hist[kGround], 161);
  EXPECT_EQ(hist[kWall], 98);
  EXPECT_EQ(hist[kPole], 41);
}

TEST(SynthScene, AllThreeClassesFromThreeHundredPoints) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PointCloud s = synth_scene(seed, 300, frnet::testing::kitti());
    std::map<Label, int> hist;
    for (Label l : *s.labels) ++hist[l];
    EXPECT_EQ(hist.size(), 3u) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------

TEST(Config, KittiGeometry) {
  RunConfig r = parse_config("height = 64\nwidth = 512\nfov_up_deg = 3.0\nfov_down_deg = -25.0");
  EXPECT_EQ(r.sensor.height, 64);
  EXPECT_EQ(r.sensor.width, 512);
  EXPECT_DOUBLE_EQ(r.sensor.fov_up_deg, 3.0);
  EXPECT_DOUBLE_EQ(r.sensor.fov_down_deg, -25.0);
  EXPECT_NEAR(r.sensor.fov(), 28.0 * std::numbers::pi / 180.0, 1e-15);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Config, NuScenesGeometry) {
  RunConfig r = parse_config("height = 32\nwidth = 480\nfov_up_deg = 10\nfov_down_deg = -30\n");
  EXPECT_EQ(r.sensor.height, 32);
  EXPECT_EQ(r.sensor.width, 480);
  EXPECT_NEAR(r.sensor.fov(), 40.0 * std::numbers::pi / 180.0, 1e-15);
}

TEST(Config, CommentsDuplicatesAndUnknownKeys) {
  RunConfig r = parse_config(
      "# sensor\nheight = 16  # rows\nwidth = 64\nfov_up_deg = 3\nfov_down_deg = -25\n"
      "height = 32\nmystery = 1\nseed = 42\n\n");
  EXPECT_EQ(r.sensor.height, 32);
  EXPECT_EQ(r.seed, 42u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("mystery"), std::string::npos);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("height = 64\nwidth = 512\nfov_up_deg = 3"), ConfigError);
  EXPECT_THROW(parse_config("height = 6x4\nwidth = 512\nfov_up_deg = 3\nfov_down_deg = -25"), ConfigError);
  EXPECT_THROW(parse_config("height 64"), ConfigError);
  EXPECT_THROW(parse_config("height = 64\nwidth = 512\nfov_up_deg = -30\nfov_down_deg = -25"), ConfigError);
  EXPECT_THROW(parse_config("height = 1\nwidth = 512\nfov_up_deg = 3\nfov_down_deg = -25"), ConfigError);
  EXPECT_THROW(parse_config("height = 64\nwidth = 512\nfov_up_deg = 3\nfov_down_deg = -25\nignore_label = 2"),
               ConfigError);
  EXPECT_THROW(parse_config("height = 64\nwidth = 512\nfov_up_deg = 3\nfov_down_deg = -25\nseed = -1"),
               ConfigError);
}

TEST(Config, TypedGetters) {
  RunConfig r = parse_config(
      "height = 16\nwidth = 64\nfov_up_deg = 3\nfov_down_deg = -25\n"
      "stage_channels = 16, 32 ,8\ninterp = off\nlr = 0.25\n");
  EXPECT_EQ(r.get_int_list("stage_channels", {}), (std::vector<int>{16, 32, 8}));
  EXPECT_FALSE(r.get_bool("interp", true));
  EXPECT_DOUBLE_EQ(r.get_double("lr", 0.0), 0.25);
  EXPECT_EQ(r.get_int("epochs", 7), 7);
  EXPECT_THROW(r.get_bool("lr", false), ConfigError);
}
