#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "rfsr/autograd.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/style.hpp"

namespace rfsr {

// Sampling steps st run 1..st_latest; the diffusion timestep falls from T.
// Partition: EARLY = [1, st1], IDLE = [st1+1, st2], REWARD = [st2+1, st_latest].
struct TimestepSchedule {
  int T = 1000;
  int st_latest = 50;
  int st1 = 20;
  int st2 = 40;

  // Throws ConfigError unless 1 <= st1 < st2 <= st_latest <= T.
  void validate() const;

  static TimestepSchedule preset(std::string_view name);  // seesr, diffbir, pasd, toy

  bool operator==(const TimestepSchedule&) const = default;
};

enum class Phase { kEarly, kIdle, kReward };

std::string_view phase_name(Phase phase);

// t = round(T * (1 - (st-1)/st_latest)); RangeError outside [1, st_latest].
int timestep_of(const TimestepSchedule& schedule, int st);
// Timestep reached after step st: timestep_of(st+1), or 0 after the last step.
int next_timestep_of(const TimestepSchedule& schedule, int st);

Phase phase_of(const TimestepSchedule& schedule, int st);

struct LossWeights {
  double lambda_dwt = 5e-4;
  double lambda_r = 5e-6;
  RewardWeights reward_weights;
};

// Inputs available to the loss at one step. Undefined tensors are "absent".
struct LossContext {
  ad::Tensor gt;
  ad::Tensor gen_train;
  ad::Tensor gen_ref;
  const Caption* caption = nullptr;
  const RewardRegistry* rewards = nullptr;
  const FeatureExtractor* extractor = nullptr;
};

struct LossBreakdown {
  ad::Tensor total;
  double dwt_ll = 0.0;          // lambda_dwt * low-frequency loss
  double reward_clipiqa = 0.0;  // weighted
  double reward_iw = 0.0;       // weighted
  double gram_kl = 0.0;         // lambda_r * Gram term
  bool skippable = false;       // IDLE: no loss defined
};

// EARLY: lambda_dwt * low_freq_loss(gt, gen_train).
// REWARD: reward_loss(gen_train) + lambda_r * gram_kl_loss(gen_train, gen_ref).
// IDLE: zero, marked skippable. Missing required context raises ConfigError.
LossBreakdown dispatch_loss(Phase phase, const LossContext& ctx, const LossWeights& weights);

// Relative odds of drawing an EARLY versus a REWARD step.
struct PhaseMix {
  double early = 0.5;
  double reward = 0.5;
};

// Picks a phase by the mix (only among nonempty phases with positive
// weight), then a step uniformly within it. IDLE is never returned.
int sample_training_step(const TimestepSchedule& schedule, const PhaseMix& mix, std::mt19937_64& rng);

}  // namespace rfsr
