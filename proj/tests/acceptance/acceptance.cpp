// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>

#include <fmt/core.h>

#include "../oracles.hpp"
#include "rfsr/config.hpp"
#include "rfsr/data.hpp"
#include "rfsr/diffusion.hpp"
#include "rfsr/dwt.hpp"
#include "rfsr/eval.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/schedule.hpp"
#include "rfsr/style.hpp"
#include "rfsr/trainer.hpp"
#include "rfsr/util.hpp"

using namespace rfsr;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void run(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, fmt::format("threw: {}", e.what())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < limit_s;
  const bool pass = o.ok && in_time;
  if (!pass) ++failures;
  fmt::print("[{}] {:2d} {}: {}; {:.2f} s (limit {:g} s{})\n", pass ? "PASS" : "FAIL", id, name, o.detail, secs,
             limit_s, in_time ? "" : ", exceeded");
  std::fflush(stdout);
}

double sum_sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// Checks analytic gradients of a scalar loss against central differences at
// `count` random coordinates; returns the worst relative error.
double worst_gradient_error(Tensor& x, const std::function<Tensor()>& loss, int count, std::uint64_t seed) {
  x.zero_grad();
  loss().backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto value = [&] {
    ad::NoGradGuard ng;
    return loss().item();
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.numel() - 1);
  double worst = 0.0;
  for (int k = 0; k < count; ++k) {
    const auto i = pick(rng);
    const double fd = oracle::central_difference(value, x.mutable_values(), i);
    worst = std::max(worst, oracle::relative_error(analytic[i], fd));
  }
  return worst;
}

struct ToyStack {
  RewardRegistry rewards;
  std::shared_ptr<FeatureExtractor> extractor = ConvStackExtractor::tiny(7, 4, 3, 2);
  ToyStack() {
    rewards.register_model(kClipIqaSlot, std::make_shared<MeanPixelReward>());
    rewards.register_model(kImageRewardSlot, std::make_shared<MeanPixelReward>());
  }
  TrainComponents components() const { return {&rewards, extractor.get()}; }
};

TrainConfig reward_only_config(double lambda_r) {
  TrainConfig cfg;
  cfg.schedule = TimestepSchedule::preset("toy");
  cfg.learning_rate = 2e-4;
  cfg.batch_size = 2;
  cfg.iterations = 50;
  cfg.gt_resolution = 16;
  cfg.ema_decay = 0.9;
  cfg.seed = 3;
  cfg.phase_mix = {0.0, 1.0};
  cfg.weights.lambda_r = lambda_r;
  return cfg;
}

DatasetConfig toy_data() {
  DatasetConfig d;
  d.synthetic = 4;
  d.crop = 16;
  d.seed = 3;
  d.degradation = DegradationConfig::bicubic_only(4);
  d.caption = {"constant", "a photo", ""};
  return d;
}

// Full-length inference on a fixed set of (lr, z) pairs.
struct FixedBatch {
  std::vector<Conditioning> conds;
  std::vector<LatentTensor> latents;

  FixedBatch(const DiffusionModel& model, const Dataset& data) {
    for (std::size_t i = 0; i < 2; ++i) {
      const auto pair = data.at(100 + i);
      Conditioning c;
      c.lr_image = pair.lr;
      c.caption = pair.caption;
      conds.push_back(c);
      latents.push_back(sample_latent(model.latent_shape(pair.gt.height(), pair.gt.width()), 900 + i));
    }
  }

  std::vector<Image> restore(const DiffusionModel& model) const {
    ad::NoGradGuard ng;
    std::vector<Image> out;
    for (std::size_t i = 0; i < conds.size(); ++i)
      out.push_back(to_image(rollout_to(model, latents[i], model.schedule().st_latest, conds[i]).image));
    return out;
  }

  double mean_pixel(const DiffusionModel& model) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& img : restore(model))
      for (double v : img.data()) {
        s += v;
        ++n;
      }
    return s / static_cast<double>(n);
  }
};

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<double> numeric_fields(const std::string& row) {
  std::vector<double> out;
  std::stringstream ss(row);
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      out.push_back(std::stod(field));
    } catch (const std::exception&) {
      out.push_back(std::nan(""));  // phase name
    }
  }
  return out;
}

}  // namespace

int main() {
  set_log_quiet(true);

  run(1, "DWT round trip and energy", 5.0, [] {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> half(1, 32);
    double worst = 0.0, worst_energy = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto img = oracle::random_image(2 * half(rng), 2 * half(rng), 1000 + k);
      const auto bands = dwt_forward(img);
      worst = std::max(worst, max_abs_diff(dwt_inverse(bands), img));
      const double e_img = sum_sq(img.data());
      const double e_bands = sum_sq(bands.ll.data) + sum_sq(bands.lh.data) + sum_sq(bands.hl.data) + sum_sq(bands.hh.data);
      worst_energy = std::max(worst_energy, std::abs(e_bands - e_img) / e_img);
    }
    return Outcome{worst < 1e-6 && worst_energy < 1e-5,
                   fmt::format("max abs err {:.2e} (< 1e-6), energy rel err {:.2e} (< 1e-5)", worst, worst_energy)};
  });

  run(2, "loss gradients vs finite differences", 30.0, [] {
    const auto gt = Tensor::constant({3, 16, 16}, oracle::random_values(768, 21, 0.0, 1.0));
    auto gen = Tensor::parameter({3, 16, 16}, oracle::random_values(768, 22, 0.0, 1.0));
    const double e_dwt = worst_gradient_error(gen, [&] { return low_freq_loss(gt, gen); }, 24, 23);

    ToyStack stack;
    const Caption caption{"a photo"};
    const double e_rew = worst_gradient_error(
        gen, [&] { return reward_loss(stack.rewards, gen, caption, RewardWeights{1.0, 1.0}).total; }, 24, 24);

    const auto ref = Tensor::constant({3, 16, 16}, oracle::random_values(768, 25, 0.0, 1.0));
    const double e_gram =
        worst_gradient_error(gen, [&] { return gram_kl_loss(gen, ref, stack.extractor.get()); }, 24, 26);
    const double worst = std::max({e_dwt, e_rew, e_gram});
    return Outcome{worst < 1e-3, fmt::format("24 coords each; worst rel err low_freq {:.1e}, reward {:.1e}, "
                                             "gram_kl {:.1e} (< 1e-3)",
                                             e_dwt, e_rew, e_gram)};
  });

  run(3, "timestep gating exhaustive", 1.0, [] {
    bool ok = true;
    std::string why;
    ToyStack stack;
    const auto gt = Tensor::constant({3, 16, 16}, oracle::random_values(768, 31, 0.0, 1.0));
    const auto gen = Tensor::constant({3, 16, 16}, oracle::random_values(768, 32, 0.0, 1.0));
    const auto ref = Tensor::constant({3, 16, 16}, oracle::random_values(768, 33, 0.0, 1.0));
    const Caption caption{"a photo"};
    LossContext ctx{gt, gen, ref, &caption, &stack.rewards, stack.extractor.get()};
    const LossWeights w;
    for (const auto& s : {TimestepSchedule{1000, 50, 20, 40}, TimestepSchedule{1000, 20, 8, 17}}) {
      int counts[3] = {0, 0, 0};
      for (int st = 1; st <= s.st_latest; ++st) {
        const Phase p = phase_of(s, st);
        const Phase expected = st <= s.st1 ? Phase::kEarly : (st > s.st2 ? Phase::kReward : Phase::kIdle);
        if (p != expected) {
          ok = false;
          why += fmt::format(" st={} wrong phase;", st);
        }
        ++counts[static_cast<int>(p)];
        const auto l = dispatch_loss(p, ctx, w);
        const bool zeros_ok =
            p == Phase::kEarly   ? (l.reward_clipiqa == 0.0 && l.reward_iw == 0.0 && l.gram_kl == 0.0)
            : p == Phase::kIdle  ? (l.dwt_ll == 0.0 && l.reward_clipiqa == 0.0 && l.reward_iw == 0.0 &&
                                   l.gram_kl == 0.0 && l.total.item() == 0.0 && l.skippable)
                                 : l.dwt_ll == 0.0;
        if (!zeros_ok) {
          ok = false;
          why += fmt::format(" st={} nonzero off-phase term;", st);
        }
      }
      if (counts[0] + counts[1] + counts[2] != s.st_latest) ok = false;
      if (counts[0] != s.st1 || counts[2] != s.st_latest - s.st2) ok = false;
    }
    const TimestepSchedule seesr = TimestepSchedule::preset("seesr");
    const int t1 = timestep_of(seesr, 1), t41 = timestep_of(seesr, 41);
    ok = ok && t1 == 1000 && t41 == 200;
    return Outcome{ok, fmt::format("20/40/50 and 8/17/20 partitioned, off-phase terms exactly 0; t(1)={}, t(41)={}{}",
                                   t1, t41, why)};
  });

  run(4, "gradient locality of final-only mode", 30.0, [] {
    auto m = build_toy_model(14);
    Conditioning cond;
    cond.lr_image = oracle::random_image(4, 4, 15);
    cond.caption = Caption{"a photo"};
    const auto z = sample_latent(m->latent_shape(8, 8), 16);
    auto grads = [&] {
      std::map<std::string, std::vector<double>> out;
      for (const auto& p : m->params().all())
        if (p.trainable && p.tensor.has_grad()) out[p.name].assign(p.tensor.grad().begin(), p.tensor.grad().end());
      m->params().zero_grad();
      return out;
    };
    bool same = true, differs = true;
    for (int target = 2; target <= m->schedule().st_latest; ++target) {
      ad::mean(rollout_to(*m, z, target, cond, true).image).backward();
      const auto flagged = grads();
      LatentTensor zt = z;
      {
        ad::NoGradGuard ng;
        for (int st = 1; st < target; ++st) zt = denoise_step(*m, zt, st, cond);
      }
      ad::mean(m->decode(ddim_step(*m, zt.detach(), target, cond).x0)).backward();
      same = same && flagged == grads();
      ad::mean(rollout_to(*m, z, target, cond, false).image).backward();
      differs = differs && grads() != flagged;
    }
    return Outcome{same && differs,
                   fmt::format("final-only grads {} single step from detached latent; full mode {}",
                               same ? "equal" : "DIFFER from", differs ? "differs" : "DOES NOT differ")};
  });

  run(5, "reward ascent on mean pixel", 60.0, [] {
    ToyStack stack;
    const auto cfg = reward_only_config(0.0);
    const Dataset data(toy_data());
    auto state = init_trainer(build_toy_model(cfg.seed), cfg);
    const FixedBatch fixed(*state.model, data);
    std::vector<double> trace{fixed.mean_pixel(*state.model)};
    for (int it = 0; it < cfg.iterations; ++it) {
      const auto batch = data.batch(static_cast<std::size_t>(it) * cfg.batch_size, cfg.batch_size);
      const auto m = train_step(state, batch, cfg, stack.components());
      if (m.phase != Phase::kReward) return Outcome{false, fmt::format("iteration {} was not a REWARD step", it + 1)};
      if ((it + 1) % 5 == 0) trace.push_back(fixed.mean_pixel(*state.model));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < trace.size(); ++i) monotone = monotone && trace[i] > trace[i - 1];
    return Outcome{monotone, fmt::format("mean pixel {:.6f} -> {:.6f} over 50 iterations, {} across 10 windows",
                                         trace.front(), trace.back(), monotone ? "strictly increasing" : "NOT monotone")};
  });

  run(6, "Gram-KL anchoring to the reference", 120.0, [] {
    ToyStack stack;
    const auto img = oracle::random_image(16, 16, 61);
    const double self = gram_kl_loss(img, img, stack.extractor.get());

    const Dataset data(toy_data());
    auto divergence_after = [&](double lambda_r) {
      const auto cfg = reward_only_config(lambda_r);
      auto state = init_trainer(build_toy_model(cfg.seed), cfg);
      for (int it = 0; it < cfg.iterations; ++it)
        train_step(state, data.batch(static_cast<std::size_t>(it) * cfg.batch_size, cfg.batch_size), cfg,
                   stack.components());
      const FixedBatch fixed(*state.model, data);
      const auto trained = fixed.restore(*state.model), ref = fixed.restore(*state.reference);
      double d = 0.0;
      for (std::size_t i = 0; i < trained.size(); ++i)
        d += final_layer_gram_distance(trained[i], ref[i], *stack.extractor);
      return d / static_cast<double>(trained.size());
    };
    const double free_run = divergence_after(0.0);
    const double anchored = divergence_after(1.0);
    return Outcome{self == 0.0 && anchored < free_run,
                   fmt::format("self loss {}; final-layer Gram distance lambda_r=1: {:.4e} vs lambda_r=0: {:.4e}", self,
                               anchored, free_run)};
  });

  run(7, "low-frequency invariance", 5.0, [] {
    const auto gt = oracle::random_image(32, 32, 71, 0.2, 0.8);
    const auto gen = oracle::random_image(32, 32, 72, 0.2, 0.8);
    const double base = low_freq_loss(gt, gen);
    auto perturbed = [&](bool high) {
      auto bands = dwt_forward(gen);
      const auto noise = oracle::random_values(bands.ll.data.size(), high ? 73 : 74, -0.05, 0.05);
      if (high) {
        for (std::size_t i = 0; i < noise.size(); ++i) {
          bands.lh.data[i] += noise[i];
          bands.hl.data[i] -= noise[i];
          bands.hh.data[i] += 0.5 * noise[i];
        }
      } else {
        for (std::size_t i = 0; i < noise.size(); ++i) bands.ll.data[i] += noise[i];
      }
      return low_freq_loss(gt, dwt_inverse(bands));
    };
    const double high_delta = std::abs(perturbed(true) - base), ll_delta = std::abs(perturbed(false) - base);
    return Outcome{high_delta < 1e-9 && ll_delta > 1e-6,
                   fmt::format("high-band change {:.1e} (< 1e-9), LL change {:.1e} (> 0)", high_delta, ll_delta)};
  });

  run(8, "trajectory analyzer on progressive deblur", 10.0, [] {
    const auto sched = TimestepSchedule::preset("seesr");
    const auto gt = synthetic_image(48, 48, 81);
    std::vector<Image> images;
    for (int st = 1; st <= sched.st_latest; ++st) {
      const double sigma = 4.0 * (sched.st_latest - st) / (sched.st_latest - 1) + 0.01;
      images.push_back(gaussian_blur(gt, sigma, sigma, 0.0, 25));
    }
    const auto recs = analyze_images(sched, images, gt);
    bool monotone = true, ll_leads = true;
    for (std::size_t i = 1; i < recs.size(); ++i) monotone = monotone && recs[i].ll_ssim >= recs[i - 1].ll_ssim;
    for (int st = 1; st <= sched.st1; ++st) ll_leads = ll_leads && recs[st - 1].ll_ssim > recs[st - 1].high_ssim;

    const auto csv = fs::temp_directory_path() / "rfsr_acceptance_traj.csv";
    write_trajectory_csv(csv, recs);
    const auto lines = read_lines(csv);
    bool schema = !lines.empty() && lines[0] == "st,t,ll_ssim,high_ssim" &&
                  lines.size() == static_cast<std::size_t>(sched.st_latest) + 1;
    for (int st = 1; schema && st <= sched.st_latest; ++st) {
      const auto f = numeric_fields(lines[st]);
      schema = f.size() == 4 && f[0] == st && f[1] == timestep_of(sched, st);
    }
    return Outcome{monotone && ll_leads && schema,
                   fmt::format("ll_ssim {:.3f} -> {:.3f} {}; ll > high at all EARLY steps: {}; CSV schema and t "
                               "column: {}",
                               recs.front().ll_ssim, recs.back().ll_ssim, monotone ? "non-decreasing" : "NOT monotone",
                               ll_leads ? "yes" : "no", schema ? "match" : "MISMATCH")};
  });

  run(9, "determinism of training and degradation", 120.0, [] {
    ToyStack stack;
    TrainConfig cfg = reward_only_config(5e-6);
    cfg.phase_mix = {0.5, 0.5};
    cfg.iterations = 20;
    cfg.checkpoint_every = 10;
    auto one_run = [&](const std::string& name) {
      const auto dir = fs::temp_directory_path() / name;
      fs::remove_all(dir);
      TrainRun r;
      r.output_dir = dir;
      train(cfg, Dataset(toy_data()), build_toy_model(cfg.seed), stack.components(), r);
      return read_lines(dir / "metrics.csv");
    };
    const auto a = one_run("rfsr_acceptance_det_a"), b = one_run("rfsr_acceptance_det_b");
    double worst = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 1; i < a.size() && i < b.size(); ++i) {
      const auto fa = numeric_fields(a[i]), fb = numeric_fields(b[i]);
      if (fa.size() != fb.size()) worst = INFINITY;
      // Column 10 is wall_time.
      for (std::size_t k = 0; k < fa.size() && k < fb.size(); ++k)
        if (k != 10 && !(std::isnan(fa[k]) && std::isnan(fb[k]))) worst = std::max(worst, std::abs(fa[k] - fb[k]));
    }
    const auto gt = synthetic_image(64, 64, 91);
    const auto deg = DegradationConfig::defaults();
    const bool bitwise = degrade(gt, deg, 17) == degrade(gt, deg, 17);
    return Outcome{worst <= 1e-7 && bitwise && a.size() == 21,
                   fmt::format("{} metric rows, max field difference {:.1e} (<= 1e-7); degrade bitwise equal: {}",
                               a.size() - 1, worst, bitwise ? "yes" : "no")};
  });

  run(10, "seesr preset matches the published defaults", 1.0, [] {
    const auto cfg = load_run_config(fs::path(RFSR_PRESET_DIR) / "seesr_rfsr.cfg");
    const auto& t = cfg.train;
    const bool ok = t.learning_rate == 5e-6 && t.batch_size == 8 && t.iterations == 10000 && t.ema_decay == 0.999 &&
                    t.weights.lambda_dwt == 5e-4 && t.weights.reward_weights.lambda_clipiqa == 5e-5 &&
                    t.weights.reward_weights.lambda_iw == 5e-6 && t.weights.lambda_r == 5e-6 &&
                    t.schedule.st1 == 20 && t.schedule.st2 == 40 && t.schedule.st_latest == 50;
    return Outcome{ok, fmt::format("lr={:g} batch={} iters={} ema={:g} dwt={:g} clipiqa={:g} iw={:g} r={:g} "
                                   "schedule={}/{}/{}",
                                   t.learning_rate, t.batch_size, t.iterations, t.ema_decay, t.weights.lambda_dwt,
                                   t.weights.reward_weights.lambda_clipiqa, t.weights.reward_weights.lambda_iw,
                                   t.weights.lambda_r, t.schedule.st1, t.schedule.st2, t.schedule.st_latest)};
  });

  fmt::print("{} of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
