#include "rfsr/reward.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/resample.hpp"
#include "rfsr/tensor_archive.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

namespace {

constexpr int kHeadChannels = 8;
constexpr int kTextDims = 16;
constexpr int kAdapterInput = 224;

constexpr double kClipMean[3] = {0.48145466, 0.4578275, 0.40821073};
constexpr double kClipStd[3] = {0.26862954, 0.26130258, 0.27577711};

// Global average pool of a (C,H,W) tensor to (C).
ad::Tensor global_pool(const ad::Tensor& x) {
  const int c = x.dim(0);
  const int positions = x.dim(1) * x.dim(2);
  auto flat = ad::reshape(x, {c, positions});
  auto ones = ad::Tensor::full({positions}, 1.0 / positions);
  return ad::matvec(flat, ones);
}

ad::Tensor dot(const ad::Tensor& a, const ad::Tensor& b) {
  return ad::matvec(ad::reshape(a, {1, static_cast<int>(a.numel())}), b);
}

}  // namespace

struct ScoringHead {
  ad::Tensor conv1, conv2, head_w, head_b, text_proj;

  static std::unique_ptr<ScoringHead> load(const std::filesystem::path& weights, bool with_text) {
    const auto path = resolve_cache_path(weights);
    if (path.empty() || !std::filesystem::exists(path)) return nullptr;
    const auto archive = load_archive(path);
    auto head = std::make_unique<ScoringHead>();
    auto take = [&](const char* name) {
      const auto& e = archive.at(name);
      return ad::Tensor::constant(e.shape, e.values);
    };
    head->conv1 = take("conv1.weight");
    head->conv2 = take("conv2.weight");
    head->head_w = take("head.weight");
    head->head_b = take("head.bias");
    if (with_text) head->text_proj = take("text.proj");
    return head;
  }

  ad::Tensor features(const ad::Tensor& image) const {
    const std::vector<double> scale{1.0 / kClipStd[0], 1.0 / kClipStd[1], 1.0 / kClipStd[2]};
    const std::vector<double> shift{-kClipMean[0] / kClipStd[0], -kClipMean[1] / kClipStd[1],
                                    -kClipMean[2] / kClipStd[2]};
    auto x = resize(image, kAdapterInput, kAdapterInput, Interpolation::kBilinear);
    x = ad::affine_channels(x, scale, shift);
    x = ad::relu(ad::conv2d(x, conv1));
    x = ad::avg_pool2(x);
    x = ad::relu(ad::conv2d(x, conv2));
    return global_pool(x);
  }
};

ad::Tensor MeanPixelReward::score(const ad::Tensor& image, const Caption&) const { return ad::mean(image); }

ClipIqaAdapter::ClipIqaAdapter(const std::filesystem::path& weights_path)
    : head_(ScoringHead::load(weights_path, false)) {}
ClipIqaAdapter::~ClipIqaAdapter() = default;
bool ClipIqaAdapter::loaded() const { return head_ != nullptr; }

ad::Tensor ClipIqaAdapter::score(const ad::Tensor& image, const Caption&) const {
  if (!head_) throw ModelError("clipiqa adapter: model not loaded");
  auto f = head_->features(image);
  return ad::add(dot(head_->head_w, f), head_->head_b);
}

ImageRewardAdapter::ImageRewardAdapter(const std::filesystem::path& weights_path)
    : head_(ScoringHead::load(weights_path, true)) {}
ImageRewardAdapter::~ImageRewardAdapter() = default;
bool ImageRewardAdapter::loaded() const { return head_ != nullptr; }

ad::Tensor ImageRewardAdapter::score(const ad::Tensor& image, const Caption& caption) const {
  if (!head_) throw ModelError("imagereward adapter: model not loaded");
  if (caption.empty()) throw ModelError("imagereward adapter: caption required but empty");
  auto f = head_->features(image);
  auto e = ad::Tensor::constant({kTextDims}, embed_caption(caption, kTextDims));
  auto text = ad::matvec(head_->text_proj, e);
  return ad::add(ad::add(dot(head_->head_w, f), dot(text, f)), head_->head_b);
}

void write_random_scoring_head(const std::filesystem::path& path, unsigned seed, bool with_text) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&](std::size_t count, double stddev) {
    std::vector<double> v(count);
    for (double& x : v) x = n01(rng) * stddev;
    return v;
  };
  TensorArchive a;
  a.add("conv1.weight", {kHeadChannels, 3, 3, 3}, draw(kHeadChannels * 27, std::sqrt(2.0 / 27)));
  a.add("conv2.weight", {kHeadChannels, kHeadChannels, 3, 3},
        draw(kHeadChannels * kHeadChannels * 9, std::sqrt(2.0 / (kHeadChannels * 9))));
  a.add("head.weight", {kHeadChannels}, draw(kHeadChannels, 0.5));
  a.add("head.bias", {1}, {0.0});
  if (with_text) a.add("text.proj", {kHeadChannels, kTextDims}, draw(kHeadChannels * kTextDims, 0.1));
  save_archive(path, a);
}

std::shared_ptr<RewardModel> make_reward_model(const std::string& kind, const std::filesystem::path& weights_path) {
  if (kind == "toy_mean") return std::make_shared<MeanPixelReward>();
  if (kind == "clipiqa") return std::make_shared<ClipIqaAdapter>(weights_path);
  if (kind == "imagereward") return std::make_shared<ImageRewardAdapter>(weights_path);
  throw ConfigError(fmt::format("unknown reward model kind '{}'", kind));
}

std::vector<double> embed_caption(const Caption& caption, int dims) {
  std::vector<double> e(static_cast<std::size_t>(dims), 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const auto h = fnv1a(token);
    e[h % dims] += (h >> 63) ? -1.0 : 1.0;
    token.clear();
  };
  for (char ch : caption.text) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else
      flush();
  }
  flush();
  double norm = 0.0;
  for (double v : e) norm += v * v;
  if (norm > 0.0)
    for (double& v : e) v /= std::sqrt(norm);
  return e;
}

RewardHandle RewardRegistry::register_model(const std::string& id, std::shared_ptr<RewardModel> model) {
  if (!model) throw ModelError(fmt::format("reward model '{}': null adapter", id));
  if (!model->loaded()) throw ModelError(fmt::format("reward model '{}': model not loaded", id));
  {
    // Self-test outside the lock; adapters may be slow.
    ad::NoGradGuard no_grad;
    const auto probe = ad::Tensor::full({3, 32, 32}, 0.5);
    const Caption caption{model->requires_caption() ? "probe" : ""};
    const double v = model->score(probe, caption).item();
    if (!std::isfinite(v))
      throw ModelError(fmt::format("reward model '{}' failed self-test: non-finite score on probe image", id));
  }
  std::unique_lock lock(mutex_);
  if (models_.count(id)) {
    auto msg = fmt::format("reward model '{}' registered twice; replacing the previous adapter", id);
    warnings_.push_back(msg);
    log_warning(msg);
  }
  models_[id] = std::move(model);
  return {id};
}

bool RewardRegistry::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return models_.count(id) != 0;
}

std::shared_ptr<const RewardModel> RewardRegistry::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = models_.find(id);
  if (it == models_.end()) return nullptr;
  return it->second;
}

std::vector<std::string> RewardRegistry::warnings() const {
  std::shared_lock lock(mutex_);
  return warnings_;
}

ad::Tensor reward_score(const RewardModel& model, const ad::Tensor& image, const Caption& caption) {
  if (!model.loaded()) throw ModelError(fmt::format("{}: model not loaded", model.kind()));
  if (model.requires_caption() && caption.empty())
    throw ModelError(fmt::format("{}: caption required but empty", model.kind()));
  return model.score(image, caption);
}

RewardScore reward_score(const RewardRegistry& registry, const RewardHandle& handle, const Image& image,
                         const Caption& caption) {
  auto model = registry.get(handle.id);
  if (!model) throw ModelError(fmt::format("reward model '{}' is not registered", handle.id));
  ad::NoGradGuard no_grad;
  return {reward_score(*model, to_tensor(image), caption).item(), handle.id};
}

RewardLoss reward_loss(const RewardRegistry& registry, const ad::Tensor& image, const Caption& caption,
                       const RewardWeights& weights) {
  if (weights.lambda_clipiqa < 0.0 || weights.lambda_iw < 0.0) throw ConfigError("reward weights must be >= 0");
  RewardLoss out;
  out.total = ad::Tensor::scalar(0.0);
  auto slot = [&](const char* id, double lambda, double& component) {
    if (lambda == 0.0) return;
    auto model = registry.get(id);
    if (!model) throw ConfigError(fmt::format("reward weight for '{}' is nonzero but no such model is registered", id));
    auto term = ad::scale(reward_score(*model, image, caption), -lambda);
    component = term.item();
    out.total = ad::add(out.total, term);
  };
  slot(kClipIqaSlot, weights.lambda_clipiqa, out.clipiqa);
  slot(kImageRewardSlot, weights.lambda_iw, out.iw);
  return out;
}

double reward_loss(const RewardRegistry& registry, const Image& image, const Caption& caption,
                   const RewardWeights& weights) {
  ad::NoGradGuard no_grad;
  return reward_loss(registry, to_tensor(image), caption, weights).total.item();
}

}  // namespace rfsr
