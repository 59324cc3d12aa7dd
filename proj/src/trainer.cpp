#include "rfsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("train.{} must be positive, got {}", name, v));
  };
  positive(learning_rate, "learning_rate");
  positive(batch_size, "batch_size");
  positive(iterations, "iterations");
  positive(gt_resolution, "gt_resolution");
  positive(checkpoint_every, "checkpoint_every");
  positive(adam_eps, "adam_eps");
  if (gt_resolution % 2) throw ConfigError(fmt::format("train.gt_resolution must be even, got {}", gt_resolution));
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError(fmt::format("train.ema_decay {} outside [0,1)", ema_decay));
  for (double b : {adam_beta1, adam_beta2})
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError(fmt::format("Adam beta {} outside [0,1)", b));
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  for (double w : {weights.lambda_dwt, weights.lambda_r, weights.reward_weights.lambda_clipiqa,
                   weights.reward_weights.lambda_iw})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError(fmt::format("loss weights must be finite and >= 0, got {}", w));
  schedule.validate();
}

std::string metrics_csv_header() {
  return "iteration,phase,st,t,loss_total,dwt_ll,reward_clipiqa,reward_iw,gram_kl,grad_norm,wall_time,skipped";
}

std::string metrics_csv_row(const TrainMetrics& m) {
  return fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.6f},{}", m.iteration,
                     phase_name(m.phase), m.st, m.t, m.loss_total, m.dwt_ll, m.reward_clipiqa, m.reward_iw, m.gram_kl,
                     m.grad_norm, m.wall_time, m.skipped ? 1 : 0);
}

TrainerState init_trainer(std::unique_ptr<DiffusionModel> model, const TrainConfig& cfg) {
  cfg.validate();
  if (!model) throw ConfigError("init_trainer: no model");
  if (!(model->schedule() == cfg.schedule))
    throw ConfigError("train schedule does not match the model's sampling schedule");
  TrainerState state;
  state.reference = model->clone();
  state.ema = make_ema(model->params(), cfg.ema_decay);
  state.model = std::move(model);
  state.rng.seed(mix_seed(cfg.seed, 0x7a));
  return state;
}

LatentTensor training_noise(const DiffusionModel& model, const Image& gt, std::uint64_t seed, int iteration,
                            int example) {
  return sample_latent(model.latent_shape(gt.height(), gt.width()),
                       mix_seed(seed, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(example)));
}

namespace {

void adam_update(TrainerState& state, const TrainConfig& cfg, double grad_scale) {
  auto& adam = state.adam;
  ++adam.step;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
  for (auto& p : state.model->params().all()) {
    if (!p.trainable) continue;
    auto values = p.tensor.mutable_values();
    auto& m = adam.m[p.name];
    auto& v = adam.v[p.name];
    m.resize(values.size(), 0.0);
    v.resize(values.size(), 0.0);
    const auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * grad_scale;
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
      values[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

double grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& p : params.all())
    if (p.trainable)
      for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

}  // namespace

TrainMetrics train_step_at(TrainerState& state, const std::vector<TrainPair>& batch, const TrainConfig& cfg,
                           const TrainComponents& components, int st) {
  const auto started = std::chrono::steady_clock::now();
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  auto& model = *state.model;
  const auto& sched = model.schedule();

  TrainMetrics m;
  m.st = st;
  m.t = timestep_of(sched, st);
  m.phase = phase_of(sched, st);
  model.params().zero_grad();

  bool finite = true;
  if (m.phase != Phase::kIdle) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size() && finite; ++b) {
      const auto& pair = batch[b];
      Conditioning cond;
      cond.lr_image = pair.lr;
      cond.caption = pair.caption;
      const auto z = training_noise(model, pair.gt, cfg.seed, state.iteration, static_cast<int>(b));

      LossContext ctx;
      ctx.gt = to_tensor(pair.gt);
      ctx.gen_train = rollout_to(model, z, st, cond, cfg.grad_final_only).image;
      ctx.caption = &pair.caption;
      ctx.rewards = components.rewards;
      ctx.extractor = components.extractor;
      if (m.phase == Phase::kReward && cfg.weights.lambda_r != 0.0)
        ctx.gen_ref = to_tensor(reference_rollout(*state.reference, z, st, cond));

      const auto parts = dispatch_loss(m.phase, ctx, cfg.weights);
      const double value = parts.total.item();
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      ad::scale(parts.total, inv_b).backward();
      m.loss_total += value * inv_b;
      m.dwt_ll += parts.dwt_ll * inv_b;
      m.reward_clipiqa += parts.reward_clipiqa * inv_b;
      m.reward_iw += parts.reward_iw * inv_b;
      m.gram_kl += parts.gram_kl * inv_b;
    }
  }

  const double norm = finite ? grad_norm(model.params()) : 0.0;
  if (!finite || !std::isfinite(norm)) {
    log_warning(fmt::format("iteration {}: non-finite loss or gradient, step skipped", state.iteration + 1));
    m = TrainMetrics{0, m.phase, m.st, m.t};
    m.skipped = true;
  } else if (m.phase != Phase::kIdle) {
    m.grad_norm = norm;
    const double scale = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
    adam_update(state, cfg, scale);
    ema_update_inplace(state.ema, model.params());
  }
  model.params().zero_grad();
  m.iteration = ++state.iteration;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return m;
}

TrainMetrics train_step(TrainerState& state, const std::vector<TrainPair>& batch, const TrainConfig& cfg,
                        const TrainComponents& components) {
  const int st = sample_training_step(state.model->schedule(), cfg.phase_mix, state.rng);
  return train_step_at(state, batch, cfg, components, st);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& dir, const TrainerState& state, const TrainConfig& cfg,
                     const std::string& resolved_config) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  save_archive(tmp / "params", state.model->params().to_archive(false));
  save_archive(tmp / "ema", state.ema.shadow);
  TensorArchive opt;
  for (const auto& [name, values] : state.adam.m) opt.add("m/" + name, {static_cast<int>(values.size())}, values);
  for (const auto& [name, values] : state.adam.v) opt.add("v/" + name, {static_cast<int>(values.size())}, values);
  save_archive(tmp / "optimizer", opt);

  std::ostringstream rng;
  rng << state.rng;
  std::ofstream meta(tmp / "meta");
  meta << "iteration = " << state.iteration << "\n"
       << "config_hash = " << hex64(fnv1a(resolved_config)) << "\n"
       << "model_kind = " << state.model->kind() << "\n"
       << "adam_step = " << state.adam.step << "\n"
       << "seed = " << cfg.seed << "\n"
       << "ema_decay = " << fmt::format("{:.17g}", state.ema.decay) << "\n"
       << "rng_state = " << rng.str() << "\n";
  meta.close();
  std::ofstream(tmp / "config.resolved") << resolved_config;
  if (!meta) throw IoError(fmt::format("failed to write checkpoint metadata in '{}'", tmp.string()));

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

namespace {

std::map<std::string, std::string> read_meta_map(const fs::path& dir) {
  std::ifstream in(dir / "meta");
  if (!in) throw IoError(fmt::format("checkpoint '{}' has no meta file", dir.string()));
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  auto kv = read_meta_map(dir);
  CheckpointMeta meta;
  try {
    meta.iteration = std::stoi(kv.at("iteration"));
    meta.config_hash = kv.at("config_hash");
    meta.model_kind = kv.at("model_kind");
    meta.rng_state = kv.at("rng_state");
    meta.adam_step = std::stol(kv.at("adam_step"));
    meta.seed = std::stoull(kv.at("seed"));
  } catch (const std::exception& e) {
    throw IoError(fmt::format("checkpoint '{}' has malformed meta: {}", dir.string(), e.what()));
  }
  return meta;
}

void load_checkpoint(const fs::path& dir, TrainerState& state) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.model_kind != state.model->kind())
    throw ConfigError(fmt::format("checkpoint holds a '{}' model, config builds '{}'", meta.model_kind,
                                  state.model->kind()));
  state.model->params().load(load_archive(dir / "params"));
  if (!fs::exists(dir / "ema")) throw ModelError(fmt::format("checkpoint '{}' has no EMA section", dir.string()));
  state.ema.shadow = load_archive(dir / "ema");
  state.adam = {};
  state.adam.step = meta.adam_step;
  const auto optimizer = load_archive(dir / "optimizer");
  for (const auto& e : optimizer.entries()) {
    const auto name = e.name.substr(2);
    (e.name.starts_with("m/") ? state.adam.m : state.adam.v)[name] = e.values;
  }
  state.iteration = meta.iteration;
  std::istringstream rng(meta.rng_state);
  rng >> state.rng;
  if (!rng) throw IoError(fmt::format("checkpoint '{}' has a corrupt RNG state", dir.string()));
}

fs::path checkpoint_path(const fs::path& output_dir, int iteration) {
  return output_dir / "checkpoints" / fmt::format("iter_{:06d}", iteration);
}

fs::path train(const TrainConfig& cfg, const Dataset& dataset, std::unique_ptr<DiffusionModel> model,
               const TrainComponents& components, const TrainRun& run) {
  auto state = init_trainer(std::move(model), cfg);
  if (run.resume) load_checkpoint(*run.resume, state);

  fs::create_directories(run.output_dir);
  std::ofstream(run.output_dir / "config.resolved") << run.resolved_config;

  // On resume keep the rows up to the checkpoint and drop anything after it.
  const auto metrics_path = run.output_dir / "metrics.csv";
  std::vector<std::string> kept;
  if (run.resume && fs::exists(metrics_path)) {
    std::ifstream in(metrics_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= state.iteration) kept.push_back(line);
  }
  std::ofstream metrics(metrics_path, std::ios::trunc);
  metrics << metrics_csv_header() << "\n";
  for (const auto& line : kept) metrics << line << "\n";
  if (!metrics) throw IoError(fmt::format("cannot write '{}'", metrics_path.string()));

  fs::path last;
  while (state.iteration < cfg.iterations) {
    const auto first = static_cast<std::size_t>(state.iteration) * static_cast<std::size_t>(cfg.batch_size);
    const auto batch = dataset.batch(first, cfg.batch_size);
    const auto m = train_step(state, batch, cfg, components);
    metrics << metrics_csv_row(m) << "\n";
    metrics.flush();
    if (state.iteration % cfg.checkpoint_every == 0) {
      last = checkpoint_path(run.output_dir, state.iteration);
      save_checkpoint(last, state, cfg, run.resolved_config);
    }
  }
  const auto final_dir = checkpoint_path(run.output_dir, state.iteration);
  if (last != final_dir) save_checkpoint(final_dir, state, cfg, run.resolved_config);
  return final_dir;
}

TensorArchive ema_weights(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint / "ema"))
    throw ModelError(fmt::format("checkpoint '{}' has no EMA section", checkpoint.string()));
  const auto params = load_archive(checkpoint / "params");
  const auto ema = load_archive(checkpoint / "ema");
  TensorArchive out;
  for (const auto& e : params.entries()) {
    const auto* shadow = ema.find(e.name);
    if (shadow && shadow->shape != e.shape)
      throw DimensionError(fmt::format("EMA entry {} does not match its parameter", e.name));
    out.add(e.name, e.shape, shadow ? shadow->values : e.values);
  }
  return out;
}

void export_ema(const fs::path& checkpoint, const fs::path& out) { save_archive(out, ema_weights(checkpoint)); }

}  // namespace rfsr
