#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "rfsr/autograd.hpp"
#include "rfsr/image.hpp"

namespace rfsr {

// Text accompanying an LR image (tags or a prompt). May be empty.
struct Caption {
  std::string text;
  bool empty() const { return text.empty(); }
};

struct RewardScore {
  double value = 0.0;
  std::string model_id;
};

// Weights of the two reward slots. Each slot is filled by the registered
// model whose id matches the slot name ("clipiqa", "iw").
struct RewardWeights {
  double lambda_clipiqa = 5e-5;
  double lambda_iw = 5e-6;
};

inline constexpr const char* kClipIqaSlot = "clipiqa";
inline constexpr const char* kImageRewardSlot = "iw";

// A differentiable image-quality scorer; higher is better on its own scale.
class RewardModel {
 public:
  virtual ~RewardModel() = default;
  virtual std::string kind() const = 0;
  virtual bool requires_caption() const { return false; }
  virtual bool loaded() const { return true; }
  // image is (3,H,W) in [0,1]; returns a 1-element tensor.
  virtual ad::Tensor score(const ad::Tensor& image, const Caption& caption) const = 0;
};

// Mean pixel value. Optimum and gradient are analytic.
class MeanPixelReward final : public RewardModel {
 public:
  std::string kind() const override { return "toy_mean"; }
  ad::Tensor score(const ad::Tensor& image, const Caption& caption) const override;
};

// Small conv + linear scoring head loaded from a tensor archive. Used as the
// backend of the CLIP-IQA and ImageReward adapters; the pretrained network
// itself is produced outside this project.
struct ScoringHead;

// CLIP-IQA style no-reference scorer: bilinear resize to 224x224, CLIP input
// normalisation, then the loaded scoring head.
class ClipIqaAdapter final : public RewardModel {
 public:
  explicit ClipIqaAdapter(const std::filesystem::path& weights_path);
  ~ClipIqaAdapter() override;
  std::string kind() const override { return "clipiqa"; }
  bool loaded() const override;
  ad::Tensor score(const ad::Tensor& image, const Caption& caption) const override;

 private:
  std::unique_ptr<ScoringHead> head_;
};

// ImageReward style text-conditioned scorer; the caption is embedded with a
// hashed bag of words and mixed into the head through a learned projection.
// An empty caption is an error.
class ImageRewardAdapter final : public RewardModel {
 public:
  explicit ImageRewardAdapter(const std::filesystem::path& weights_path);
  ~ImageRewardAdapter() override;
  std::string kind() const override { return "imagereward"; }
  bool requires_caption() const override { return true; }
  bool loaded() const override;
  ad::Tensor score(const ad::Tensor& image, const Caption& caption) const override;

 private:
  std::unique_ptr<ScoringHead> head_;
};

// Writes a randomly initialised scoring-head archive compatible with the
// adapters above (used by tests and for smoke runs).
void write_random_scoring_head(const std::filesystem::path& path, unsigned seed, bool with_text);

// Constructs an adapter from a config `kind` (toy_mean, clipiqa, imagereward).
// Unknown kinds raise ConfigError.
std::shared_ptr<RewardModel> make_reward_model(const std::string& kind, const std::filesystem::path& weights_path);

// Fixed-size hashed bag-of-words embedding used for captions by the toy text
// encoders. Deterministic and independent of platform.
std::vector<double> embed_caption(const Caption& caption, int dims);

struct RewardHandle {
  std::string id;
};

// Thread-safe registry; scoring takes a shared lock, registration is exclusive.
class RewardRegistry {
 public:
  // Probes the adapter on a mid-gray image; non-finite scores reject it
  // with ModelError. A duplicate id replaces the old model and records a
  // warning.
  RewardHandle register_model(const std::string& id, std::shared_ptr<RewardModel> model);

  bool contains(const std::string& id) const;
  std::shared_ptr<const RewardModel> get(const std::string& id) const;
  std::vector<std::string> warnings() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<RewardModel>> models_;
  std::vector<std::string> warnings_;
};

RewardScore reward_score(const RewardRegistry& registry, const RewardHandle& handle, const Image& image,
                         const Caption& caption);
ad::Tensor reward_score(const RewardModel& model, const ad::Tensor& image, const Caption& caption);

struct RewardLoss {
  ad::Tensor total;         // lambda_clipiqa * l_clipiqa + lambda_iw * l_iw
  double clipiqa = 0.0;     // weighted component values
  double iw = 0.0;
};

// Per-model loss is the negated score. Slots with zero weight are skipped
// entirely (no model required, caption ignored).
RewardLoss reward_loss(const RewardRegistry& registry, const ad::Tensor& image, const Caption& caption,
                       const RewardWeights& weights);
double reward_loss(const RewardRegistry& registry, const Image& image, const Caption& caption,
                   const RewardWeights& weights);

}  // namespace rfsr
