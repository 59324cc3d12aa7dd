#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rfsr/autograd.hpp"
#include "rfsr/image.hpp"

namespace rfsr {

struct FeatureStack {
  std::vector<ad::Tensor> layers;  // each (C_i, H_i, W_i)
  std::string extractor_id;
};

struct GramMatrix {
  ad::Tensor g;  // (C, C)
  int layer_index = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual std::size_t layer_count() const = 0;
  // image is (3,H,W) in [0,1].
  virtual FeatureStack extract(const ad::Tensor& image) const = 0;
};

// A feed-forward stack of conv (+ optional bias) and ReLU blocks, with 2x2
// pooling before selected blocks. Outputs are taken after the ReLU of the
// blocks named in the configured layer list.
class ConvStackExtractor final : public FeatureExtractor {
 public:
  struct Block {
    std::string name;  // output name, e.g. "relu1_2" or "stage1"
    ad::Tensor weight;
    ad::Tensor bias;  // may be undefined
    bool pool_before = false;
    bool max_pool = true;
  };

  ConvStackExtractor(std::string id, std::vector<Block> blocks, std::vector<std::string> layers,
                     std::vector<double> input_mean = {}, std::vector<double> input_std = {});

  // Fixed-seed random bias-free extractor used for tests and the toy stack:
  // `stages` blocks named stage1..stageN, each conv(kernel) + ReLU, with
  // average pooling between stages when `pool` is set. No input
  // normalisation, so it is positively homogeneous of degree one.
  static std::shared_ptr<ConvStackExtractor> tiny(unsigned seed, int channels = 8, int kernel = 3, int stages = 4,
                                                  bool pool = true, std::vector<std::string> layers = {});

  // VGG-16 style stack from a tensor archive holding conv{b}_{i}.weight and
  // .bias. Applies ImageNet mean/std normalisation. Default layers are
  // relu1_2, relu2_2, relu3_3, relu4_3.
  static std::shared_ptr<ConvStackExtractor> vgg16(const std::filesystem::path& weights,
                                                   std::vector<std::string> layers = {});

  std::string id() const override { return id_; }
  std::size_t layer_count() const override { return layers_.size(); }
  FeatureStack extract(const ad::Tensor& image) const override;
  const std::vector<std::string>& layers() const { return layers_; }

 private:
  std::string id_;
  std::vector<Block> blocks_;
  std::vector<std::string> layers_;
  std::vector<double> scale_, shift_;
  std::size_t last_needed_ = 0;
};

// Config-driven construction: kind "tiny" or "vgg16". Missing weights raise ConfigError.
struct ExtractorConfig {
  std::string kind = "tiny";
  std::filesystem::path weights_path;
  std::vector<std::string> layers;
  unsigned seed = 7;
  int channels = 8;
  int kernel = 3;
};
std::shared_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& config);

FeatureStack extract_features(const FeatureExtractor* extractor, const Image& image);

// F F^T / (C*H*W) with F the (C, H*W) flattening. Throws on empty maps.
GramMatrix gram(const ad::Tensor& feature_map, int layer_index = 0);

// Mean over layers of the squared Frobenius distance between the Gram
// matrices of the two images' features. The reference image carries no
// gradient.
ad::Tensor gram_kl_loss(const ad::Tensor& img_train, const ad::Tensor& img_ref, const FeatureExtractor* extractor);
double gram_kl_loss(const Image& img_train, const Image& img_ref, const FeatureExtractor* extractor);

// Squared Frobenius Gram distance on the last layer only (diagnostics).
double final_layer_gram_distance(const Image& a, const Image& b, const FeatureExtractor& extractor);

}  // namespace rfsr
