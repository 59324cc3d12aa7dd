#include "rfsr/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/resample.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

void check_conditioning(const ConditioningRequirements& req, const Conditioning& cond, const std::string& model) {
  if (req.lr_image && !cond.lr_image) throw ModelError(fmt::format("{}: conditioning requires lr_image", model));
  if (req.control_signal && !cond.control_signal)
    throw ModelError(fmt::format("{}: conditioning requires control_signal", model));
  if (req.caption && !cond.caption) throw ModelError(fmt::format("{}: conditioning requires caption", model));
}

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(std::string name, std::string group, bool trainable, ad::Shape shape, std::vector<double> values) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument(fmt::format("duplicate parameter {}", name));
  auto t = trainable ? ad::Tensor::parameter(std::move(shape), std::move(values))
                     : ad::Tensor::constant(std::move(shape), std::move(values));
  params_.push_back({std::move(name), std::move(group), trainable, std::move(t)});
}

Parameter& ParamStore::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range(fmt::format("no parameter named {}", name));
}

const Parameter& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.params_.push_back({p.name, p.group, p.trainable, p.tensor.clone()});
  return out;
}

TensorArchive ParamStore::to_archive(bool trainable_only) const {
  TensorArchive a;
  for (const auto& p : params_)
    if (!trainable_only || p.trainable) a.add(p.name, p.tensor);
  return a;
}

void ParamStore::load(const TensorArchive& archive) {
  for (auto& p : params_) {
    const auto* e = archive.find(p.name);
    if (!e) continue;
    if (e->shape != p.tensor.shape())
      throw DimensionError(fmt::format("parameter {}: archive shape {} vs model {}", p.name, ad::shape_str(e->shape),
                                       ad::shape_str(p.tensor.shape())));
    std::copy(e->values.begin(), e->values.end(), p.tensor.mutable_values().begin());
  }
}

std::uint64_t ParamStore::hash(const std::string& group) const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& p : params_)
    if (group.empty() || p.group == group) h = fnv1a(p.tensor.values(), fnv1a(p.name, h));
  return h;
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (std::find(out.begin(), out.end(), p.group) == out.end()) out.push_back(p.group);
  return out;
}

// ---------------------------------------------------------------------------
// Noise schedule and DDIM

NoiseSchedule::NoiseSchedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("noise schedule needs T >= 1");
  alpha_bar_.resize(static_cast<std::size_t>(T) + 1);
  alpha_bar_[0] = 1.0;
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  for (int i = 1; i <= T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i - 1) / (T - 1);
    const double root = a + (b - a) * frac;
    alpha_bar_[i] = alpha_bar_[i - 1] * (1.0 - root * root);
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T()) throw RangeError(fmt::format("timestep {} outside [0, {}]", t, T()));
  return alpha_bar_[static_cast<std::size_t>(t)];
}

DenoiseResult ddim_step(const DiffusionModel& model, const LatentTensor& z, int st, const Conditioning& cond) {
  check_conditioning(model.requirements(), cond, model.kind());
  const auto& sched = model.schedule();
  const int t = timestep_of(sched, st);
  const int t_next = next_timestep_of(sched, st);
  const double a = model.noise().alpha_bar(t);
  const double a_next = model.noise().alpha_bar(t_next);

  const auto eps = model.predict_noise(z, st, t, cond);
  auto x0 = ad::scale(ad::sub(z, ad::scale(eps, std::sqrt(1.0 - a))), 1.0 / std::sqrt(a));
  auto z_next = ad::add(ad::scale(x0, std::sqrt(a_next)), ad::scale(eps, std::sqrt(1.0 - a_next)));
  return {std::move(z_next), std::move(x0)};
}

LatentTensor denoise_step(const DiffusionModel& model, const LatentTensor& z, int st, const Conditioning& cond) {
  return ddim_step(model, z, st, cond).z_next;
}

ad::Tensor decode(const DiffusionModel& model, const LatentTensor& z) { return model.decode(z); }

RolloutResult rollout_to(const DiffusionModel& model, const LatentTensor& z_init, int target_st,
                         const Conditioning& cond, bool grad_final_only) {
  const auto& sched = model.schedule();
  if (target_st < 1 || target_st > sched.st_latest)
    throw RangeError(fmt::format("rollout target {} outside [1, {}]", target_st, sched.st_latest));
  LatentTensor z = z_init.detach();
  {
    std::optional<ad::NoGradGuard> no_grad;
    if (grad_final_only) no_grad.emplace();
    for (int st = 1; st < target_st; ++st) z = denoise_step(model, z, st, cond);
  }
  auto last = ddim_step(model, z, target_st, cond);
  return {std::move(last.z_next), model.decode(last.x0)};
}

Image reference_rollout(const DiffusionModel& frozen_model, const LatentTensor& z_init, int target_st,
                        const Conditioning& cond) {
  ad::NoGradGuard no_grad;
  return to_image(rollout_to(frozen_model, z_init, target_st, cond, true).image);
}

DenoisingTrajectory rollout_trajectory(const DiffusionModel& model, const LatentTensor& z_init,
                                       const Conditioning& cond, bool decode_each) {
  ad::NoGradGuard no_grad;
  const auto& sched = model.schedule();
  DenoisingTrajectory traj;
  LatentTensor z = z_init.detach();
  for (int st = 1; st <= sched.st_latest; ++st) {
    auto r = ddim_step(model, z, st, cond);
    TrajectoryStep step{st, timestep_of(sched, st), z, std::nullopt};
    if (decode_each) step.decoded = to_image(model.decode(r.x0));
    traj.push_back(std::move(step));
    z = r.z_next;
  }
  return traj;
}

LatentTensor sample_latent(const ad::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n01(rng);
  return ad::Tensor::constant(shape, std::move(v));
}

// ---------------------------------------------------------------------------
// EMA

EMAState make_ema(const ParamStore& params, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError(fmt::format("EMA decay {} outside [0,1)", decay));
  return {decay, params.to_archive(true)};
}

void ema_update_inplace(EMAState& state, const ParamStore& params) {
  std::size_t matched = 0;
  for (const auto& p : params.all()) {
    if (!p.trainable) continue;
    const auto* e = state.shadow.find(p.name);
    if (!e || e->shape != p.tensor.shape())
      throw DimensionError(fmt::format("EMA shadow does not match parameter {}", p.name));
    auto& shadow = const_cast<NamedTensor*>(e)->values;
    const auto v = p.tensor.values();
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = state.decay * shadow[i] + (1.0 - state.decay) * v[i];
    ++matched;
  }
  if (matched != state.shadow.size()) throw DimensionError("EMA shadow has entries with no trainable parameter");
}

EMAState ema_update(EMAState state, const ParamStore& params) {
  ema_update_inplace(state, params);
  return state;
}

// ---------------------------------------------------------------------------
// Toy model

namespace {

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = n01(rng) * stddev;
  return v;
}

}  // namespace

ToyDiffusionModel::ToyDiffusionModel(std::uint64_t seed, ToyModelConfig config)
    : config_(std::move(config)), noise_(config_.schedule.T) {
  config_.schedule.validate();
  if (config_.hidden < 1 || config_.factor < 1) throw ConfigError("toy model: hidden and factor must be positive");
  latent_channels_ = 3 * config_.factor * config_.factor;
  const int cz = latent_channels_, hd = config_.hidden;
  std::mt19937_64 rng(seed);
  params_.add("unet.conv_in.weight", "unet", true, {hd, cz, 3, 3},
              normal_values(rng, static_cast<std::size_t>(hd) * cz * 9, std::sqrt(1.0 / (cz * 9))));
  params_.add("unet.time_embed", "unet", true, {config_.schedule.st_latest, hd},
              normal_values(rng, static_cast<std::size_t>(config_.schedule.st_latest) * hd, 0.1));
  params_.add("unet.conv_out.weight", "unet", true, {cz, hd, 3, 3},
              normal_values(rng, static_cast<std::size_t>(cz) * hd * 9, 0.05));
  params_.add("unet.out_bias", "unet", true, {cz}, std::vector<double>(static_cast<std::size_t>(cz), 0.0));
  params_.add("control.conv.weight", "control", true, {hd, 3, 3, 3},
              normal_values(rng, static_cast<std::size_t>(hd) * 27, std::sqrt(1.0 / 27)));
  params_.add("text_encoder.proj", "text_encoder", false, {hd, config_.text_dims},
              normal_values(rng, static_cast<std::size_t>(hd) * config_.text_dims, 0.1));
  params_.add("decoder.scale", "decoder", false, {1}, {config_.decoder_scale});
}

ConditioningRequirements ToyDiffusionModel::requirements() const {
  return {config_.use_lr, false, config_.use_caption};
}

ad::Shape ToyDiffusionModel::latent_shape(int image_height, int image_width) const {
  if (image_height % config_.factor || image_width % config_.factor)
    throw DimensionError(fmt::format("image {}x{} not divisible by latent factor {}", image_height, image_width,
                                     config_.factor));
  return {latent_channels_, image_height / config_.factor, image_width / config_.factor};
}

ad::Tensor ToyDiffusionModel::head(const LatentTensor& z, int st, const Conditioning& cond) const {
  if (z.shape().size() != 3 || z.dim(0) != latent_channels_)
    throw DimensionError(fmt::format("toy model: latent shape {} does not match {} channels", ad::shape_str(z.shape()),
                                     latent_channels_));
  const int h = z.dim(1), w = z.dim(2);
  auto hidden = ad::conv2d(z, params_.at("unet.conv_in.weight").tensor);
  auto bias = ad::row(params_.at("unet.time_embed").tensor, st - 1);
  if (config_.use_caption && cond.caption) {
    auto e = ad::Tensor::constant({config_.text_dims}, embed_caption(*cond.caption, config_.text_dims));
    bias = ad::add(bias, ad::matvec(params_.at("text_encoder.proj").tensor, e));
  }
  hidden = ad::add_channel_bias(hidden, bias);
  if (config_.use_lr && cond.lr_image) {
    ad::Tensor lr;
    {
      ad::NoGradGuard no_grad;
      lr = resize(to_tensor(*cond.lr_image), h, w, Interpolation::kBilinear);
      lr = ad::add_scalar(lr, -0.5);
    }
    hidden = ad::add(hidden, ad::conv2d(lr, params_.at("control.conv.weight").tensor));
  }
  hidden = ad::silu(hidden);
  auto out = ad::conv2d(hidden, params_.at("unet.conv_out.weight").tensor);
  return ad::add_channel_bias(out, params_.at("unet.out_bias").tensor);
}

ad::Tensor ToyDiffusionModel::predict_noise(const LatentTensor& z, int st, int t, const Conditioning& cond) const {
  const double a = noise_.alpha_bar(t);
  return ad::sub(ad::scale(z, std::sqrt(1.0 - a)), ad::scale(head(z, st, cond), std::sqrt(a)));
}

ad::Tensor ToyDiffusionModel::decode(const LatentTensor& z) const {
  if (z.shape().size() != 3 || z.dim(0) != latent_channels_)
    throw DimensionError(fmt::format("decode: latent shape {} does not match decoder", ad::shape_str(z.shape())));
  auto img = ad::depth_to_space(z, config_.factor);
  img = ad::add_scalar(ad::mul_scalar(img, params_.at("decoder.scale").tensor), 0.5);
  return ad::smooth_clamp01(img, config_.clamp_margin);
}

ad::Tensor ToyDiffusionModel::encode(const ad::Tensor& image) const {
  const double s = params_.at("decoder.scale").tensor.values()[0];
  return ad::space_to_depth(ad::scale(ad::add_scalar(image, -0.5), 1.0 / s), config_.factor);
}

std::unique_ptr<DiffusionModel> ToyDiffusionModel::clone() const {
  auto copy = std::make_unique<ToyDiffusionModel>(*this);
  copy->params_ = params_.clone();
  return copy;
}

std::unique_ptr<ToyDiffusionModel> build_toy_model(std::uint64_t seed, const ToyModelConfig& config) {
  return std::make_unique<ToyDiffusionModel>(seed, config);
}

ConditioningRequirements external_requirements(const std::string& kind) {
  if (kind == "seesr") return {true, true, true};
  if (kind == "pasd") return {true, true, true};
  if (kind == "diffbir") return {false, true, false};
  throw ConfigError(fmt::format("unknown model kind '{}'", kind));
}

std::unique_ptr<DiffusionModel> make_model(const ModelConfig& config) {
  if (config.kind == "toy") return build_toy_model(config.seed, config.toy);
  (void)external_requirements(config.kind);
  throw ModelError(fmt::format(
      "model kind '{}' needs its external pretrained checkpoint ('{}') and network runtime, which this build does not "
      "provide; use model.kind = toy",
      config.kind, config.weights_path));
}

}  // namespace rfsr
