#include "rfsr/schedule.hpp"

#include <cmath>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"

namespace rfsr {

void TimestepSchedule::validate() const {
  if (!(1 <= st1 && st1 < st2 && st2 <= st_latest && st_latest <= T))
    throw ConfigError(fmt::format("invalid schedule: need 1 <= st1 < st2 <= st_latest <= T, got st1={} st2={} "
                                  "st_latest={} T={}",
                                  st1, st2, st_latest, T));
}

TimestepSchedule TimestepSchedule::preset(std::string_view name) {
  if (name == "seesr" || name == "diffbir") return {1000, 50, 20, 40};
  if (name == "pasd") return {1000, 20, 8, 17};
  if (name == "toy") return {1000, 10, 4, 8};
  throw ConfigError(fmt::format("unknown schedule preset '{}'", name));
}

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kEarly: return "EARLY";
    case Phase::kIdle: return "IDLE";
    case Phase::kReward: return "REWARD";
  }
  return "?";
}

int timestep_of(const TimestepSchedule& s, int st) {
  if (st < 1 || st > s.st_latest)
    throw RangeError(fmt::format("sampling step {} outside [1, {}]", st, s.st_latest));
  const double t = s.T * (1.0 - static_cast<double>(st - 1) / s.st_latest);
  return static_cast<int>(std::lround(t));
}

int next_timestep_of(const TimestepSchedule& s, int st) {
  if (st == s.st_latest) return 0;
  return timestep_of(s, st + 1);
}

Phase phase_of(const TimestepSchedule& s, int st) {
  if (st < 1 || st > s.st_latest)
    throw RangeError(fmt::format("sampling step {} outside [1, {}]", st, s.st_latest));
  if (st <= s.st1) return Phase::kEarly;
  if (st > s.st2) return Phase::kReward;
  return Phase::kIdle;
}

LossBreakdown dispatch_loss(Phase phase, const LossContext& ctx, const LossWeights& w) {
  LossBreakdown out;
  out.total = ad::Tensor::scalar(0.0);
  if (!ctx.gen_train.defined() && phase != Phase::kIdle) throw ConfigError("dispatch_loss: gen_train missing");
  switch (phase) {
    case Phase::kIdle:
      out.skippable = true;
      return out;
    case Phase::kEarly: {
      if (!ctx.gt.defined()) throw ConfigError("dispatch_loss: EARLY phase requires gt");
      out.total = ad::scale(low_freq_loss(ctx.gt, ctx.gen_train), w.lambda_dwt);
      out.dwt_ll = out.total.item();
      return out;
    }
    case Phase::kReward: {
      if (!ctx.rewards) throw ConfigError("dispatch_loss: REWARD phase requires reward models");
      if (!ctx.caption) throw ConfigError("dispatch_loss: REWARD phase requires a caption");
      auto r = reward_loss(*ctx.rewards, ctx.gen_train, *ctx.caption, w.reward_weights);
      out.total = r.total;
      out.reward_clipiqa = r.clipiqa;
      out.reward_iw = r.iw;
      if (w.lambda_r != 0.0) {
        if (!ctx.gen_ref.defined()) throw ConfigError("dispatch_loss: REWARD phase requires gen_ref");
        if (!ctx.extractor) throw ConfigError("dispatch_loss: REWARD phase requires a feature extractor");
        auto g = ad::scale(gram_kl_loss(ctx.gen_train, ctx.gen_ref, ctx.extractor), w.lambda_r);
        out.gram_kl = g.item();
        out.total = ad::add(out.total, g);
      }
      return out;
    }
  }
  return out;
}

int sample_training_step(const TimestepSchedule& s, const PhaseMix& mix, std::mt19937_64& rng) {
  const int early_count = s.st1;
  const int reward_count = s.st_latest - s.st2;
  const double we = early_count > 0 ? std::max(mix.early, 0.0) : 0.0;
  const double wr = reward_count > 0 ? std::max(mix.reward, 0.0) : 0.0;
  if (we + wr <= 0.0) throw ConfigError("sample_training_step: no phase has both steps and positive weight");
  // Fixed draw count per call keeps the stream position independent of outcomes.
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double pick = u01(rng);
  const double within = u01(rng);
  if (pick * (we + wr) < we) return 1 + std::min(early_count - 1, static_cast<int>(within * early_count));
  return s.st2 + 1 + std::min(reward_count - 1, static_cast<int>(within * reward_count));
}

}  // namespace rfsr
