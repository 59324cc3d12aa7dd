#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rfsr/autograd.hpp"
#include "rfsr/image.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/schedule.hpp"
#include "rfsr/tensor_archive.hpp"

namespace rfsr {

// Latents are (C_z, H/f, W/f) tensors.
using LatentTensor = ad::Tensor;

struct Conditioning {
  std::optional<Image> lr_image;
  std::optional<ad::Tensor> control_signal;
  std::optional<Caption> caption;
};

struct ConditioningRequirements {
  bool lr_image = false;
  bool control_signal = false;
  bool caption = false;
};

// Throws ModelError naming the first required field that is absent.
void check_conditioning(const ConditioningRequirements& req, const Conditioning& cond, const std::string& model);

// Named parameters grouped by sub-network. Trainable tensors accumulate
// gradients; frozen ones are plain constants.
struct Parameter {
  std::string name;
  std::string group;
  bool trainable = false;
  ad::Tensor tensor;
};

class ParamStore {
 public:
  void add(std::string name, std::string group, bool trainable, ad::Shape shape, std::vector<double> values);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  void zero_grad();
  ParamStore clone() const;

  TensorArchive to_archive(bool trainable_only = false) const;
  // Overwrites values of every parameter present in the archive; shapes must match.
  void load(const TensorArchive& archive);

  // Hash of all values in a group (or of everything when group is empty).
  std::uint64_t hash(const std::string& group = {}) const;
  std::vector<std::string> groups() const;

 private:
  std::vector<Parameter> params_;
};

// Scaled-linear beta schedule (0.00085 .. 0.012 in sqrt space) over T steps.
// alpha_bar(0) = 1 and alpha_bar(t) = prod_{i<=t} (1 - beta_i).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int T = 1000, double beta_start = 0.00085, double beta_end = 0.012);
  double alpha_bar(int t) const;
  int T() const { return static_cast<int>(alpha_bar_.size()) - 1; }

 private:
  std::vector<double> alpha_bar_;
};

// G_theta(z_t, I_lr, t, c_v, c_t): a latent noise predictor plus a latent decoder.
class DiffusionModel {
 public:
  virtual ~DiffusionModel() = default;
  virtual std::string kind() const = 0;
  virtual ConditioningRequirements requirements() const = 0;
  virtual const TimestepSchedule& schedule() const = 0;
  virtual const NoiseSchedule& noise() const = 0;

  // Latent shape that decodes to an image of the given size.
  virtual ad::Shape latent_shape(int image_height, int image_width) const = 0;
  virtual ad::Tensor predict_noise(const LatentTensor& z, int st, int t, const Conditioning& cond) const = 0;
  // Differentiable latent -> image in [0,1] (smooth clamp inside the graph).
  virtual ad::Tensor decode(const LatentTensor& z) const = 0;

  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual std::unique_ptr<DiffusionModel> clone() const = 0;
};

struct DenoiseResult {
  LatentTensor z_next;  // latent at next_timestep_of(st)
  LatentTensor x0;      // clean-latent prediction at st
};

// One deterministic DDIM (eta = 0) update from t(st) to t(st+1), or to 0 at st_latest.
DenoiseResult ddim_step(const DiffusionModel& model, const LatentTensor& z, int st, const Conditioning& cond);
LatentTensor denoise_step(const DiffusionModel& model, const LatentTensor& z, int st, const Conditioning& cond);

ad::Tensor decode(const DiffusionModel& model, const LatentTensor& z);

struct RolloutResult {
  LatentTensor latent;  // after step target_st
  ad::Tensor image;     // decoded clean prediction at target_st (I_t)
};

// Runs steps 1..target_st from z_init. With grad_final_only, steps before
// the target run without gradient tracking, so only the target step and
// the decode carry gradients.
RolloutResult rollout_to(const DiffusionModel& model, const LatentTensor& z_init, int target_st,
                         const Conditioning& cond, bool grad_final_only = true);

// Same inputs on the frozen model, no gradients anywhere.
Image reference_rollout(const DiffusionModel& frozen_model, const LatentTensor& z_init, int target_st,
                        const Conditioning& cond);

struct TrajectoryStep {
  int st = 0;
  int t = 0;
  LatentTensor latent;       // latent entering step st
  std::optional<Image> decoded;  // decoded clean prediction at st
};
using DenoisingTrajectory = std::vector<TrajectoryStep>;

DenoisingTrajectory rollout_trajectory(const DiffusionModel& model, const LatentTensor& z_init,
                                       const Conditioning& cond, bool decode_each = true);

// Standard-normal latent seeded by `seed`.
LatentTensor sample_latent(const ad::Shape& shape, std::uint64_t seed);

struct EMAState {
  double decay = 0.999;
  TensorArchive shadow;  // trainable parameters only
};

EMAState make_ema(const ParamStore& params, double decay);
// shadow <- decay * shadow + (1 - decay) * params for every trainable parameter.
EMAState ema_update(EMAState state, const ParamStore& params);
void ema_update_inplace(EMAState& state, const ParamStore& params);

struct ToyModelConfig {
  int hidden = 8;
  int factor = 2;  // VAE downsampling
  double decoder_scale = 0.25;
  double clamp_margin = 0.01;
  bool use_lr = true;
  bool use_caption = true;
  int text_dims = 16;
  TimestepSchedule schedule = TimestepSchedule::preset("toy");
};

// A desk-scale stand-in for a latent ISR diffusion model:
//  - "VAE": latent = space_to_depth((image - 0.5) / scale, f); decode is the
//    inverse followed by a smooth clamp.
//  - noise predictor: two 3x3 convs around a SiLU with hidden channels, a
//    per-step embedding table, an LR control branch and a frozen hashed text
//    encoder. The head h parameterises eps = sqrt(1-a) z - sqrt(a) h, so the
//    clean prediction is x0 = sqrt(a) z + sqrt(1-a) h.
// Trainable groups: "unet", "control". Frozen: "text_encoder", "decoder".
class ToyDiffusionModel final : public DiffusionModel {
 public:
  ToyDiffusionModel(std::uint64_t seed, ToyModelConfig config);

  std::string kind() const override { return "toy"; }
  ConditioningRequirements requirements() const override;
  const TimestepSchedule& schedule() const override { return config_.schedule; }
  const NoiseSchedule& noise() const override { return noise_; }
  ad::Shape latent_shape(int image_height, int image_width) const override;
  ad::Tensor predict_noise(const LatentTensor& z, int st, int t, const Conditioning& cond) const override;
  ad::Tensor decode(const LatentTensor& z) const override;
  ad::Tensor encode(const ad::Tensor& image) const;

  // Correction head h (exposed for tests).
  ad::Tensor head(const LatentTensor& z, int st, const Conditioning& cond) const;

  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  std::unique_ptr<DiffusionModel> clone() const override;
  const ToyModelConfig& config() const { return config_; }

 private:
  ToyModelConfig config_;
  NoiseSchedule noise_;
  ParamStore params_;
  int latent_channels_ = 12;
};

std::unique_ptr<ToyDiffusionModel> build_toy_model(std::uint64_t seed, const ToyModelConfig& config = {});

// Conditioning contracts of the external ISR adapters. Their networks load
// from external checkpoints which this build cannot execute; constructing
// one raises ModelError.
ConditioningRequirements external_requirements(const std::string& kind);

struct ModelConfig {
  std::string kind = "toy";
  std::string weights_path;
  std::uint64_t seed = 0;
  ToyModelConfig toy;
};
std::unique_ptr<DiffusionModel> make_model(const ModelConfig& config);

}  // namespace rfsr
