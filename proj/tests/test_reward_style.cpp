#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/style.hpp"
#include "rfsr/util.hpp"

using namespace rfsr;
using ad::Tensor;

namespace {

class NanReward final : public RewardModel {
 public:
  std::string kind() const override { return "nan"; }
  Tensor score(const Tensor&, const Caption&) const override { return Tensor::scalar(std::nan("")); }
};

class ConstantReward final : public RewardModel {
 public:
  explicit ConstantReward(double v) : v_(v) {}
  std::string kind() const override { return "constant"; }
  Tensor score(const Tensor&, const Caption&) const override { return Tensor::scalar(v_); }

 private:
  double v_;
};

void register_toy(RewardRegistry& r) {
  r.register_model(kClipIqaSlot, std::make_shared<MeanPixelReward>());
  r.register_model(kImageRewardSlot, std::make_shared<MeanPixelReward>());
}

// One 3x3 conv + ReLU block, written out directly so Gram values can be
// computed without the library's extractor.
struct OneLayer {
  int channels = 4;
  std::vector<double> w;

  explicit OneLayer(std::uint64_t seed) : w(oracle::random_values(4 * 3 * 9, seed, -0.5, 0.5)) {}

  std::shared_ptr<ConvStackExtractor> extractor() const {
    ConvStackExtractor::Block b;
    b.name = "only";
    b.weight = Tensor::constant({channels, 3, 3, 3}, w);
    return std::make_shared<ConvStackExtractor>("one_layer", std::vector{b}, std::vector<std::string>{"only"});
  }

  std::vector<double> gram_of(const Image& img) const {
    const int h = img.height(), wd = img.width();
    std::vector<double> f(static_cast<std::size_t>(channels) * h * wd);
    for (int co = 0; co < channels; ++co)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
          double acc = 0.0;
          for (int ci = 0; ci < 3; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = y + ky - 1, xx = x + kx - 1;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += w[((co * 3 + ci) * 3 + ky) * 3 + kx] * img.at(ci, yy, xx);
              }
          f[(static_cast<std::size_t>(co) * h + y) * wd + x] = std::max(acc, 0.0);
        }
    const std::size_t p = static_cast<std::size_t>(h) * wd;
    std::vector<double> g(channels * channels, 0.0);
    for (int i = 0; i < channels; ++i)
      for (int j = 0; j < channels; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < p; ++q) s += f[i * p + q] * f[j * p + q];
        g[i * channels + j] = s / static_cast<double>(channels * p);
      }
    return g;
  }
};

double frobenius_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST(MeanPixelReward, Values) {
  MeanPixelReward r;
  EXPECT_DOUBLE_EQ(r.score(Tensor::full({3, 4, 4}, 0.5), {}).item(), 0.5);
  EXPECT_DOUBLE_EQ(r.score(Tensor::zeros({3, 4, 4}), {}).item(), 0.0);
}

TEST(RewardLoss, ZeroWeightsGiveZero) {
  RewardRegistry empty;
  const auto img = to_tensor(oracle::random_image(8, 8, 1));
  EXPECT_EQ(reward_loss(empty, img, {}, RewardWeights{0.0, 0.0}).total.item(), 0.0);
}

TEST(RewardLoss, ToyRewardsOnHalfGray) {
  RewardRegistry reg;
  register_toy(reg);
  const auto r = reward_loss(reg, Tensor::full({3, 8, 8}, 0.5), {"x"}, RewardWeights{1.0, 1.0});
  EXPECT_DOUBLE_EQ(r.total.item(), -1.0);
  EXPECT_DOUBLE_EQ(r.clipiqa, -0.5);
  EXPECT_DOUBLE_EQ(r.iw, -0.5);
}

TEST(RewardLoss, MissingSlotIsConfigError) {
  RewardRegistry reg;
  reg.register_model(kClipIqaSlot, std::make_shared<MeanPixelReward>());
  EXPECT_THROW(reward_loss(reg, Tensor::full({3, 4, 4}, 0.5), {}, RewardWeights{1.0, 1.0}), ConfigError);
  EXPECT_NO_THROW(reward_loss(reg, Tensor::full({3, 4, 4}, 0.5), {}, RewardWeights{1.0, 0.0}));
}

TEST(Registry, DuplicateReplacesWithWarning) {
  set_log_quiet(true);
  RewardRegistry reg;
  reg.register_model("a", std::make_shared<ConstantReward>(1.0));
  reg.register_model("a", std::make_shared<ConstantReward>(2.0));
  ASSERT_EQ(reg.warnings().size(), 1u);
  EXPECT_DOUBLE_EQ(reward_score(reg, {"a"}, Image(4, 4, 0.5), {}).value, 2.0);
}

TEST(Registry, NonFiniteProbeRejected) {
  RewardRegistry reg;
  EXPECT_THROW(reg.register_model("bad", std::make_shared<NanReward>()), ModelError);
  EXPECT_FALSE(reg.contains("bad"));
}

TEST(Adapters, ClipIqaIsDeterministic) {
  const auto path = std::filesystem::temp_directory_path() / "rfsr_test_clipiqa.rfsr";
  write_random_scoring_head(path, 3, false);
  ClipIqaAdapter a(path);
  ASSERT_TRUE(a.loaded());
  const auto img = to_tensor(oracle::random_image(40, 36, 4));
  const double s1 = a.score(img, {}).item(), s2 = a.score(img, {}).item();
  EXPECT_EQ(s1, s2);
  EXPECT_TRUE(std::isfinite(s1));
  std::filesystem::remove(path);
}

TEST(Adapters, ImageRewardNeedsCaption) {
  const auto path = std::filesystem::temp_directory_path() / "rfsr_test_iw.rfsr";
  write_random_scoring_head(path, 5, true);
  ImageRewardAdapter a(path);
  const auto img = to_tensor(oracle::random_image(16, 16, 6));
  EXPECT_THROW(a.score(img, {}), ModelError);
  const double s1 = a.score(img, {"a cat"}).item();
  const double s2 = a.score(img, {"a dog on grass"}).item();
  EXPECT_NE(s1, s2);
  std::filesystem::remove(path);
}

TEST(Adapters, MissingWeightsNotLoaded) {
  ClipIqaAdapter a("/nonexistent/clipiqa.rfsr");
  EXPECT_FALSE(a.loaded());
  RewardRegistry reg;
  EXPECT_THROW(reg.register_model("clipiqa", std::make_shared<ClipIqaAdapter>("/nonexistent/clipiqa.rfsr")),
               ModelError);
  EXPECT_THROW(make_reward_model("hpsv2", ""), ConfigError);
}

TEST(Gram, HandComputedTwoChannel) {
  const auto f = Tensor::constant({2, 2, 2}, {1, 1, 1, 1, 2, 2, 2, 2});
  const auto g = rfsr::gram(f).g.to_vector();
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
  EXPECT_DOUBLE_EQ(g[3], 2.0);
}

TEST(Gram, ZeroMapGivesZero) {
  for (double v : rfsr::gram(Tensor::zeros({3, 4, 4})).g.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Extractor, ZeroImageZeroFeatures) {
  const auto ex = ConvStackExtractor::tiny(1);
  for (const auto& layer : ex->extract(Tensor::zeros({3, 16, 16})).layers)
    for (double v : layer.values()) EXPECT_EQ(v, 0.0);
}

TEST(Extractor, Deterministic) {
  const auto ex = ConvStackExtractor::tiny(2);
  const auto img = to_tensor(oracle::random_image(16, 16, 3));
  const auto a = ex->extract(img), b = ex->extract(img);
  ASSERT_EQ(a.layers.size(), b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) EXPECT_EQ(a.layers[l].to_vector(), b.layers[l].to_vector());
}

TEST(GramKl, IdenticalIsZero) {
  const auto ex = ConvStackExtractor::tiny(4);
  const auto img = oracle::random_image(16, 16, 5);
  EXPECT_EQ(gram_kl_loss(img, img, ex.get()), 0.0);
}

TEST(GramKl, ScaledImageThroughOneLayer) {
  const OneLayer layer(6);
  const auto ex = layer.extractor();
  const auto img = oracle::random_image(10, 12, 7, 0.0, 0.5);
  Image doubled = img;
  for (double& v : doubled.data()) v *= 2.0;
  const auto g = layer.gram_of(img);
  double expected = 0.0;
  for (double v : g) expected += (3.0 * v) * (3.0 * v);
  EXPECT_NEAR(gram_kl_loss(doubled, img, ex.get()), expected, 1e-12 * std::max(1.0, expected));
}

TEST(GramKl, RandomPairMatchesComposition) {
  const OneLayer layer(8);
  const auto ex = layer.extractor();
  const auto a = oracle::random_image(12, 10, 9), b = oracle::random_image(12, 10, 10);
  EXPECT_NEAR(gram_kl_loss(a, b, ex.get()), frobenius_sq(layer.gram_of(a), layer.gram_of(b)), 1e-7);
  EXPECT_NEAR(final_layer_gram_distance(a, b, *ex), frobenius_sq(layer.gram_of(a), layer.gram_of(b)), 1e-7);
}

TEST(GramKl, ReferenceCarriesNoGradient) {
  const auto ex = ConvStackExtractor::tiny(11, 4, 3, 2);
  auto train = Tensor::parameter({3, 8, 8}, oracle::random_values(192, 12, 0, 1));
  auto ref = Tensor::parameter({3, 8, 8}, oracle::random_values(192, 13, 0, 1));
  gram_kl_loss(train, ref, ex.get()).backward();
  EXPECT_TRUE(train.has_grad());
  EXPECT_FALSE(ref.has_grad());
}

TEST(GramKl, MissingExtractor) {
  EXPECT_THROW(gram_kl_loss(Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 4}), nullptr), ConfigError);
}
