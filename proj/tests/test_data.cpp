#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rfsr/data.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/image_io.hpp"
#include "rfsr/util.hpp"

using namespace rfsr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rfsr_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DegradationConfig noise_only(double sigma) {
  DegradationConfig cfg = DegradationConfig::bicubic_only(4);
  DegradationStage s;
  s.kind = StageKind::kNoise;
  s.gaussian_sigma = {sigma, sigma};
  s.poisson_prob = 0.0;
  cfg.first = {s};
  cfg.second_order = false;
  return cfg;
}

}  // namespace

TEST(Degrade, BicubicOnlyMatchesReferenceResampler) {
  const auto gt = oracle::random_image(32, 40, 1);
  const auto lr = degrade(gt, DegradationConfig::bicubic_only(4), 9);
  ASSERT_EQ(lr.height(), 8);
  ASSERT_EQ(lr.width(), 10);
  Image ref = oracle::bicubic_resize(gt, 8, 10);
  for (double& v : ref.data()) v = std::clamp(v, 0.0, 1.0);
  EXPECT_LT(max_abs_diff(lr, ref), 1e-6);
}

TEST(Degrade, DeterministicPerSeed) {
  const auto gt = synthetic_image(64, 64, 2);
  const auto cfg = DegradationConfig::defaults();
  const auto a = degrade(gt, cfg, 77), b = degrade(gt, cfg, 77), c = degrade(gt, cfg, 78);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_TRUE(a.in_unit_range());
}

TEST(Degrade, ZeroSigmaNoiseIsIdentity) {
  const auto gt = oracle::random_image(16, 16, 3);
  EXPECT_EQ(degrade(gt, noise_only(0.0), 4), degrade(gt, DegradationConfig::bicubic_only(4), 4));
}

TEST(Degrade, NonMultipleSizeRoundsUp) {
  const auto lr = degrade(oracle::random_image(18, 22, 5), DegradationConfig::bicubic_only(4), 0);
  EXPECT_EQ(lr.height(), 5);
  EXPECT_EQ(lr.width(), 6);
}

TEST(Degrade, ValidationRejectsInvertedRange) {
  auto cfg = DegradationConfig::defaults();
  cfg.first[0].sigma = {3.0, 1.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DegradationConfig::defaults();
  cfg.first[3].quality = {0.0, 50.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Blur, KernelIsNormalisedAndSymmetric) {
  const auto k = gaussian_kernel2d(1.5, 1.5, 0.0, 9);
  double s = 0.0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-14);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      EXPECT_NEAR(k[y * 9 + x], k[x * 9 + y], 1e-16);
      EXPECT_NEAR(k[y * 9 + x], k[(8 - y) * 9 + (8 - x)], 1e-16);
    }
}

TEST(Blur, IsotropicMatchesSeparableGaussian) {
  const int n = 7, r = 3;
  const double sigma = 1.2;
  const auto k = gaussian_kernel2d(sigma, sigma, 0.7, n);
  std::vector<double> g(n);
  double gs = 0.0;
  for (int i = 0; i < n; ++i) gs += g[i] = std::exp(-(i - r) * (i - r) / (2 * sigma * sigma));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) EXPECT_NEAR(k[y * n + x], g[y] * g[x] / (gs * gs), 1e-15);
}

TEST(Blur, ConstantImageUnchanged) {
  const Image flat(12, 10, 0.3);
  EXPECT_LT(max_abs_diff(gaussian_blur(flat, 2.0, 0.8, 0.4, 21), flat), 1e-14);
}

TEST(Captions, Providers) {
  const Image lr(4, 4, 0.5);
  EXPECT_EQ(ConstantCaptionProvider("photo").caption_of(lr, "x").text, "photo");
  EXPECT_TRUE(NoCaptionProvider().caption_of(lr, "x").empty());
  EXPECT_THROW(make_caption_provider({"blip", "", ""}), ConfigError);
}

TEST(Captions, DapeTagCache) {
  const auto dir = fresh_dir("dape");
  const Image lr = oracle::random_image(4, 4, 6);
  {
    std::ofstream f(dir / "tags.csv");
    f << "# key,tags\n"
      << "img_0001,\"sky, tree, grass\"\n"
      << image_key(lr) << ",building\n";
  }
  DapeCaptionProvider dape(dir / "tags.csv");
  EXPECT_EQ(dape.caption_of(lr, "img_0001").text, "sky, tree, grass");
  EXPECT_EQ(dape.caption_of(lr, "").text, "building");
  EXPECT_EQ(dape.caption_of(lr, "").text, dape.caption_of(lr, "").text);
  EXPECT_THROW(dape.caption_of(Image(4, 4, 0.1), "unknown"), ModelError);
  EXPECT_THROW(DapeCaptionProvider(dir / "missing.csv"), ConfigError);
}

TEST(Dataset, ShapesFromFiles) {
  const auto dir = fresh_dir("dataset");
  write_png(dir / "a.png", synthetic_image(80, 96, 1));
  write_png(dir / "b.png", synthetic_image(70, 70, 2));
  write_png(dir / "c.png", synthetic_image(64, 100, 3));
  DatasetConfig cfg;
  cfg.roots = {dir};
  cfg.crop = 64;
  Dataset ds(cfg);
  EXPECT_EQ(ds.source_count(), 3u);
  const auto pairs = ds.batch(0, 5);
  ASSERT_EQ(pairs.size(), 5u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.gt.height(), 64);
    EXPECT_EQ(p.gt.width(), 64);
    EXPECT_EQ(p.lr.height(), 16);
    EXPECT_EQ(p.lr.width(), 16);
    EXPECT_NO_THROW(p.gt.check_valid());
  }
}

TEST(Dataset, FixedSeedReproducesSequence) {
  DatasetConfig cfg;
  cfg.synthetic = 4;
  cfg.crop = 32;
  cfg.seed = 11;
  const Dataset a(cfg), b(cfg);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto pa = a.at(i), pb = b.at(i);
    EXPECT_EQ(pa.gt, pb.gt);
    EXPECT_EQ(pa.lr, pb.lr);
    EXPECT_EQ(pa.source_id, pb.source_id);
  }
  cfg.seed = 12;
  EXPECT_NE(Dataset(cfg).at(0).lr, a.at(0).lr);
}

TEST(Dataset, SmallSourceIsReflectPadded) {
  const auto dir = fresh_dir("small");
  const auto small = synthetic_image(20, 24, 4);
  write_png(dir / "s.png", small);
  DatasetConfig cfg;
  cfg.roots = {dir};
  cfg.crop = 32;
  cfg.degradation = DegradationConfig::bicubic_only(4);
  const auto p = Dataset(cfg).at(0);
  // Pixel (21, 25) mirrors (17, 21) in a 20x24 source read back from 8 bits.
  const auto stored = read_png(dir / "s.png");
  EXPECT_EQ(p.gt.at(0, 21, 25), stored.at(0, 17, 21));
  EXPECT_EQ(p.gt.at(2, 0, 0), stored.at(2, 0, 0));
}

TEST(Dataset, UnreadableSourceSkipped) {
  set_log_quiet(true);
  const auto dir = fresh_dir("unreadable");
  write_png(dir / "good.png", synthetic_image(40, 40, 5));
  std::ofstream(dir / "bad.png") << "not a png";
  DatasetConfig cfg;
  cfg.roots = {dir};
  cfg.crop = 32;
  const Dataset ds(cfg);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ds.at(i).source_id, "good");
}

TEST(Dataset, ConfigErrors) {
  DatasetConfig cfg;
  cfg.roots = {"/nonexistent/rfsr"};
  EXPECT_THROW(Dataset{cfg}, ConfigError);
  cfg.roots.clear();
  cfg.synthetic = 2;
  cfg.crop = 33;
  EXPECT_THROW(Dataset{cfg}, ConfigError);
}

TEST(Png, RoundTripIs8Bit) {
  const auto dir = fresh_dir("png");
  const auto img = oracle::random_image(6, 8, 7);
  write_png(dir / "x.png", img);
  const auto back = read_png(dir / "x.png");
  EXPECT_LE(max_abs_diff(back, img), 0.5 / 255.0 + 1e-12);
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(Jpeg, RoundTripIsCloseAndDeterministic) {
  // A smooth ramp: no edges for chroma subsampling to smear.
  Image img(32, 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) img.at(c, y, x) = 0.2 + 0.5 * x / 32.0 + 0.1 * c;
  const auto a = jpeg_roundtrip(img, 90), b = jpeg_roundtrip(img, 90);
  EXPECT_EQ(a, b);
  double mad = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) mad += std::abs(a.data()[i] - img.data()[i]);
  EXPECT_LT(mad / static_cast<double>(img.size()), 0.01);
  EXPECT_NE(jpeg_roundtrip(img, 30), a);
}
