#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rfsr/data.hpp"
#include "rfsr/diffusion.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/schedule.hpp"
#include "rfsr/style.hpp"
#include "rfsr/tensor_archive.hpp"

namespace rfsr {

struct TrainConfig {
  double learning_rate = 5e-6;
  int batch_size = 8;
  int iterations = 10000;
  int gt_resolution = 512;
  double ema_decay = 0.999;
  TimestepSchedule schedule = TimestepSchedule::preset("seesr");
  LossWeights weights;
  PhaseMix phase_mix;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  bool grad_final_only = true;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws ConfigError on non-positive numerics or an odd resolution.
  void validate() const;
};

struct TrainMetrics {
  int iteration = 0;  // 1-based, counts skipped steps too
  Phase phase = Phase::kEarly;
  int st = 0;
  int t = 0;
  double loss_total = 0.0;
  double dwt_ll = 0.0;
  double reward_clipiqa = 0.0;
  double reward_iw = 0.0;
  double gram_kl = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;  // seconds spent in this step
  bool skipped = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const TrainMetrics& m);

struct AdamState {
  long step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

struct TrainerState {
  std::unique_ptr<DiffusionModel> model;
  std::unique_ptr<DiffusionModel> reference;  // frozen copy of the initial weights
  EMAState ema;
  AdamState adam;
  int iteration = 0;
  std::mt19937_64 rng;
};

// The reference model is a clone of `model` taken here, before any update.
TrainerState init_trainer(std::unique_ptr<DiffusionModel> model, const TrainConfig& cfg);

struct TrainComponents {
  const RewardRegistry* rewards = nullptr;
  const FeatureExtractor* extractor = nullptr;
};

// One iteration: sample st, roll every batch element out to st (shared
// z_init between trained and reference model), dispatch the phase loss,
// average over the batch, one Adam step on trainable parameters and an EMA
// update. A non-finite loss or gradient skips the update; the iteration
// counter and RNG still advance.
TrainMetrics train_step(TrainerState& state, const std::vector<TrainPair>& batch, const TrainConfig& cfg,
                        const TrainComponents& components);

// Same, but with st fixed by the caller instead of drawn from the schedule.
TrainMetrics train_step_at(TrainerState& state, const std::vector<TrainPair>& batch, const TrainConfig& cfg,
                           const TrainComponents& components, int st);

// Standard-normal z_init for (seed, iteration, example).
LatentTensor training_noise(const DiffusionModel& model, const Image& gt, std::uint64_t seed, int iteration,
                            int example);

// Checkpoint directory layout: params, ema, optimizer (tensor archives),
// meta (key = value text) and config.resolved.
struct CheckpointMeta {
  int iteration = 0;
  std::string config_hash;
  std::string model_kind;
  std::string rng_state;
  long adam_step = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& dir, const TrainerState& state, const TrainConfig& cfg,
                     const std::string& resolved_config);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);
// Restores params, EMA, optimizer, iteration and RNG into a state built by
// init_trainer from the same configuration.
void load_checkpoint(const std::filesystem::path& dir, TrainerState& state);

struct TrainRun {
  std::filesystem::path output_dir;
  std::string resolved_config;  // echoed into every checkpoint
  std::optional<std::filesystem::path> resume;
};

// Runs iterations up to cfg.iterations, appending one metrics row per
// iteration to output_dir/metrics.csv and writing checkpoints every
// checkpoint_every iterations plus a final one. Returns the final
// checkpoint directory.
std::filesystem::path train(const TrainConfig& cfg, const Dataset& dataset, std::unique_ptr<DiffusionModel> model,
                            const TrainComponents& components, const TrainRun& run);

std::filesystem::path checkpoint_path(const std::filesystem::path& output_dir, int iteration);

// Writes the EMA shadow merged over the checkpoint's parameters as a
// standalone weights archive. Throws ModelError when the EMA is missing.
void export_ema(const std::filesystem::path& checkpoint, const std::filesystem::path& out);
TensorArchive ema_weights(const std::filesystem::path& checkpoint);

}  // namespace rfsr
