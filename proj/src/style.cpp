#include "rfsr/style.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/tensor_archive.hpp"

namespace rfsr {

ConvStackExtractor::ConvStackExtractor(std::string id, std::vector<Block> blocks, std::vector<std::string> layers,
                                       std::vector<double> input_mean, std::vector<double> input_std)
    : id_(std::move(id)), blocks_(std::move(blocks)), layers_(std::move(layers)) {
  if (blocks_.empty()) throw ConfigError("feature extractor has no blocks");
  if (layers_.empty()) throw ConfigError("feature extractor: empty layer list");
  for (const auto& name : layers_) {
    auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
    if (it == blocks_.end()) throw ConfigError(fmt::format("feature extractor {}: unknown layer '{}'", id_, name));
    last_needed_ = std::max(last_needed_, static_cast<std::size_t>(it - blocks_.begin()));
  }
  if (!input_mean.empty()) {
    if (input_mean.size() != 3 || input_std.size() != 3) throw ConfigError("input normalisation needs 3 means and stds");
    for (int c = 0; c < 3; ++c) {
      scale_.push_back(1.0 / input_std[c]);
      shift_.push_back(-input_mean[c] / input_std[c]);
    }
  }
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::tiny(unsigned seed, int channels, int kernel, int stages,
                                                             bool pool, std::vector<std::string> layers) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Block> blocks;
  std::vector<std::string> names;
  int in = 3;
  for (int s = 0; s < stages; ++s) {
    const double stddev = std::sqrt(2.0 / (in * kernel * kernel));
    std::vector<double> w(static_cast<std::size_t>(channels) * in * kernel * kernel);
    for (double& v : w) v = n01(rng) * stddev;
    Block b;
    b.name = fmt::format("stage{}", s + 1);
    b.weight = ad::Tensor::constant({channels, in, kernel, kernel}, std::move(w));
    b.pool_before = pool && s > 0;
    b.max_pool = false;
    names.push_back(b.name);
    blocks.push_back(std::move(b));
    in = channels;
  }
  if (layers.empty()) layers = names;
  return std::make_shared<ConvStackExtractor>(fmt::format("tiny-{}-k{}", seed, kernel), std::move(blocks),
                                              std::move(layers));
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::vgg16(const std::filesystem::path& weights,
                                                              std::vector<std::string> layers) {
  if (weights.empty() || !std::filesystem::exists(weights))
    throw ConfigError(fmt::format("vgg16 extractor: weights not found at '{}'", weights.string()));
  const auto archive = load_archive(weights);
  static constexpr int kConvsPerStage[5] = {2, 2, 3, 3, 3};
  std::vector<Block> blocks;
  for (int stage = 1; stage <= 5; ++stage)
    for (int i = 1; i <= kConvsPerStage[stage - 1]; ++i) {
      const auto prefix = fmt::format("conv{}_{}", stage, i);
      if (!archive.contains(prefix + ".weight")) continue;
      const auto& w = archive.at(prefix + ".weight");
      const auto& b = archive.at(prefix + ".bias");
      Block block;
      block.name = fmt::format("relu{}_{}", stage, i);
      block.weight = ad::Tensor::constant(w.shape, w.values);
      block.bias = ad::Tensor::constant(b.shape, b.values);
      block.pool_before = stage > 1 && i == 1;
      block.max_pool = true;
      blocks.push_back(std::move(block));
    }
  if (layers.empty()) layers = {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
  return std::make_shared<ConvStackExtractor>("vgg16", std::move(blocks), std::move(layers),
                                              std::vector<double>{0.485, 0.456, 0.406},
                                              std::vector<double>{0.229, 0.224, 0.225});
}

FeatureStack ConvStackExtractor::extract(const ad::Tensor& image) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw DimensionError(fmt::format("extract_features: expected (3,H,W), got {}", ad::shape_str(image.shape())));
  FeatureStack out;
  out.extractor_id = id_;
  out.layers.resize(layers_.size());
  ad::Tensor x = scale_.empty() ? image : ad::affine_channels(image, scale_, shift_);
  for (std::size_t i = 0; i <= last_needed_; ++i) {
    const auto& b = blocks_[i];
    if (b.pool_before) x = b.max_pool ? ad::max_pool2(x) : ad::avg_pool2(x);
    x = ad::conv2d(x, b.weight);
    if (b.bias.defined()) x = ad::add_channel_bias(x, b.bias);
    x = ad::relu(x);
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l] == b.name) out.layers[l] = x;
  }
  return out;
}

std::shared_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& config) {
  if (config.kind == "tiny")
    return ConvStackExtractor::tiny(config.seed, config.channels, config.kernel, 4, config.kernel > 1, config.layers);
  if (config.kind == "vgg16") return ConvStackExtractor::vgg16(config.weights_path, config.layers);
  throw ConfigError(fmt::format("unknown feature extractor kind '{}'", config.kind));
}

FeatureStack extract_features(const FeatureExtractor* extractor, const Image& image) {
  if (!extractor) throw ConfigError("feature extractor missing");
  ad::NoGradGuard no_grad;
  return extractor->extract(to_tensor(image));
}

GramMatrix gram(const ad::Tensor& feature_map, int layer_index) { return {ad::gram(feature_map), layer_index}; }

ad::Tensor gram_kl_loss(const ad::Tensor& img_train, const ad::Tensor& img_ref, const FeatureExtractor* extractor) {
  if (!extractor) throw ConfigError("gram_kl_loss: feature extractor missing");
  if (img_train.shape() != img_ref.shape())
    throw DimensionError(fmt::format("gram_kl_loss: shape mismatch {} vs {}", ad::shape_str(img_train.shape()),
                                     ad::shape_str(img_ref.shape())));
  FeatureStack ref;
  {
    ad::NoGradGuard no_grad;
    ref = extractor->extract(img_ref.detach());
  }
  const auto train = extractor->extract(img_train);
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (std::size_t l = 0; l < train.layers.size(); ++l) {
    auto diff = ad::sub(ad::gram(train.layers[l]), ad::gram(ref.layers[l]));
    total = ad::add(total, ad::sum(ad::square(diff)));
  }
  return ad::scale(total, 1.0 / static_cast<double>(train.layers.size()));
}

double gram_kl_loss(const Image& img_train, const Image& img_ref, const FeatureExtractor* extractor) {
  require_same_shape(img_train, img_ref, "gram_kl_loss");
  ad::NoGradGuard no_grad;
  return gram_kl_loss(to_tensor(img_train), to_tensor(img_ref), extractor).item();
}

double final_layer_gram_distance(const Image& a, const Image& b, const FeatureExtractor& extractor) {
  require_same_shape(a, b, "final_layer_gram_distance");
  ad::NoGradGuard no_grad;
  const auto fa = extractor.extract(to_tensor(a));
  const auto fb = extractor.extract(to_tensor(b));
  auto diff = ad::sub(ad::gram(fa.layers.back()), ad::gram(fb.layers.back()));
  return ad::sum(ad::square(diff)).item();
}

}  // namespace rfsr
