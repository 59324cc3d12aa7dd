#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/resample.hpp"

using namespace rfsr;

TEST(CubicKernel, MatchesKeysPolynomial) {
  for (double x = -2.5; x <= 2.5; x += 0.125) EXPECT_NEAR(cubic_kernel(x), oracle::keys_cubic(x), 1e-15) << x;
  EXPECT_EQ(cubic_kernel(0.0), 1.0);
  EXPECT_EQ(cubic_kernel(1.0), 0.0);
  EXPECT_EQ(cubic_kernel(2.0), 0.0);
}

TEST(ResizeWeights, RowsSumToOne) {
  for (auto interp : {Interpolation::kArea, Interpolation::kBilinear, Interpolation::kBicubic})
    for (auto [in, out] : {std::pair{17, 5}, std::pair{4, 13}, std::pair{8, 8}}) {
      const auto w = resize_weights(in, out, interp);
      for (int i = 0; i < out; ++i) {
        double s = 0.0;
        for (int j = 0; j < in; ++j) s += w[static_cast<std::size_t>(i) * in + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
}

TEST(Resize, BicubicDownscaleMatchesDirectFormula) {
  const auto img = oracle::random_image(32, 24, 5);
  const auto got = resize(img, 8, 6, Interpolation::kBicubic);
  EXPECT_LT(max_abs_diff(got, oracle::bicubic_resize(img, 8, 6)), 1e-12);
}

TEST(Resize, BicubicUpscaleMatchesDirectFormula) {
  const auto img = oracle::random_image(6, 5, 6);
  const auto got = resize(img, 15, 13, Interpolation::kBicubic);
  EXPECT_LT(max_abs_diff(got, oracle::bicubic_resize(img, 15, 13)), 1e-12);
}

TEST(Resize, AreaHalvingAveragesBlocks) {
  const auto img = oracle::random_image(8, 8, 7);
  const auto got = resize(img, 4, 4, Interpolation::kArea);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double mean = (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) + img.at(c, 2 * y + 1, 2 * x) +
                             img.at(c, 2 * y + 1, 2 * x + 1)) /
                            4.0;
        EXPECT_NEAR(got.at(c, y, x), mean, 1e-12);
      }
}

TEST(Resize, IdentitySize) {
  const auto img = oracle::random_image(9, 7, 8);
  EXPECT_LT(max_abs_diff(resize(img, 9, 7, Interpolation::kBicubic), img), 1e-14);
}

TEST(Resize, TensorFormAgrees) {
  const auto img = oracle::random_image(12, 10, 9);
  const auto a = resize(img, 5, 4, Interpolation::kBilinear);
  const auto b = to_image(resize(to_tensor(img), 5, 4, Interpolation::kBilinear));
  EXPECT_LT(max_abs_diff(a, b), 1e-14);
}

TEST(Resize, InterpolationNames) {
  EXPECT_EQ(parse_interpolation("bicubic"), Interpolation::kBicubic);
  EXPECT_EQ(interpolation_name(Interpolation::kArea), "area");
  EXPECT_THROW(parse_interpolation("lanczos"), ConfigError);
}
