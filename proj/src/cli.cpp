#include "rfsr/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "rfsr/config.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/image_io.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string resume, out, model, data, metrics, lr, gt, plot, in, checkpoint;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

// A model to run inference with: either a checkpoint directory (EMA weights
// when present) or a weights archive paired with --config.
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<DiffusionModel> model;
};

LoadedModel load_model(const Options& o) {
  const fs::path target = o.model;
  LoadedModel out;
  if (fs::is_directory(target)) {
    const auto cfg_path = o.config.empty() ? target / "config.resolved" : fs::path(o.config);
    out.config = load_run_config(cfg_path, o.sets);
    out.model = build_model(out.config);
    try {
      out.model->params().load(ema_weights(target));
    } catch (const ModelError&) {
      log_warning(fmt::format("checkpoint '{}' has no EMA; using raw parameters", target.string()));
      out.model->params().load(load_archive(target / "params"));
    }
  } else {
    if (o.config.empty()) throw ConfigError("--model is not a checkpoint directory; pass --config as well");
    if (!fs::exists(target)) throw ConfigError(fmt::format("model '{}' does not exist", target.string()));
    out.config = load_run_config(o.config, o.sets);
    out.model = build_model(out.config);
    out.model->params().load(load_archive(target));
  }
  return out;
}

int cmd_train(const Options& o) {
  auto cfg = load_run_config(o.config, o.sets);
  if (!o.out.empty()) {
    cfg.output_dir = o.out;
    cfg.resolved["output_dir"] = o.out;
  }
  auto model = build_model(cfg);
  auto rewards = build_rewards(cfg);
  auto extractor = build_extractor(cfg);
  Dataset dataset(cfg.data);
  TrainRun run;
  run.output_dir = cfg.output_dir;
  run.resolved_config = resolved_config_text(cfg);
  if (!o.resume.empty()) run.resume = o.resume;
  const auto final_ckpt = train(cfg.train, dataset, std::move(model), {rewards.get(), extractor.get()}, run);
  std::cout << "final checkpoint: " << final_ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  auto loaded = load_model(o);
  const auto& cfg = loaded.config;
  const auto ids = o.metrics.empty() ? cfg.eval_metrics : parse_metric_list(o.metrics);
  std::vector<std::unique_ptr<MetricAdapter>> owned;
  std::vector<const MetricAdapter*> metrics;
  for (const auto& id : ids) {
    owned.push_back(make_metric(id, cfg.metric_options));
    metrics.push_back(owned.back().get());
  }
  const auto captions = make_caption_provider(cfg.data.caption);
  const auto items = load_eval_set(o.data, cfg.data.degradation.scale, *captions);
  EvalOptions opts;
  opts.seed = o.seed_given ? o.seed : cfg.eval_seed;
  opts.scale = cfg.data.degradation.scale;
  opts.dataset_id = fs::path(o.data).filename().string();
  opts.config_hash = config_hash(cfg);
  ModelRestorer restorer(*loaded.model, fs::path(o.model).filename().string());
  const auto report = evaluate(restorer, items, metrics, opts);
  write_report_csv(o.out, report);
  for (std::size_t k = 0; k < report.metrics.size(); ++k)
    std::cout << report.metrics[k] << " = "
              << (report.means[k] ? fmt::format("{:.6g}", *report.means[k]) : std::string("n/a")) << "\n";
  return 0;
}

int cmd_analyze(const Options& o) {
  auto loaded = load_model(o);
  const Image lr = read_png(o.lr);
  const Image gt = pad_to_even(read_png(o.gt));
  AnalyzeOptions opts;
  opts.seed = o.seed_given ? o.seed : loaded.config.eval_seed;
  opts.caption = make_caption_provider(loaded.config.data.caption)->caption_of(lr, fs::path(o.lr).stem().string());
  const auto records = analyze_trajectory(*loaded.model, lr, gt, opts);
  write_trajectory_csv(o.out, records);
  if (!o.plot.empty()) write_trajectory_plot(o.plot, records);
  std::cout << "wrote " << records.size() << " steps to " << o.out << "\n";
  return 0;
}

int cmd_degrade(const Options& o) {
  const auto cfg = load_run_config(o.config, o.sets);
  const auto sources = list_images({o.in});
  if (sources.empty()) throw ConfigError(fmt::format("no PNG images in '{}'", o.in));
  const fs::path out = o.out;
  fs::create_directories(out / "lr");
  fs::create_directories(out / "gt");
  std::ofstream manifest(out / "manifest.csv");
  manifest << "source_id,seed,lr_path,gt_path\n";
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Image gt;
    try {
      gt = pad_to_even(read_png(sources[i]));
    } catch (const std::exception& e) {
      log_warning(fmt::format("skipping unreadable image '{}': {}", sources[i].string(), e.what()));
      continue;
    }
    const auto id = sources[i].stem().string();
    const auto seed = mix_seed(o.seed, i);
    const auto lr = degrade(gt, cfg.data.degradation, seed);
    const auto lr_path = fs::path("lr") / (id + ".png"), gt_path = fs::path("gt") / (id + ".png");
    write_png(out / lr_path, lr);
    write_png(out / gt_path, gt);
    manifest << id << "," << seed << "," << lr_path.string() << "," << gt_path.string() << "\n";
  }
  if (!manifest) throw IoError("failed to write manifest.csv");
  return 0;
}

int cmd_export_ema(const Options& o) {
  export_ema(o.checkpoint, o.out);
  std::cout << "exported EMA weights to " << o.out << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Timestep-gated reward fine-tuning for diffusion super-resolution", "rfsr"};
  app.require_subcommand(1);
  Options o;
  auto add_sets = [&](CLI::App* sub) {
    sub->add_option("--set", o.sets, "Override a config key (key=value), repeatable");
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](std::uint64_t s) {
          o.seed = s;
          o.seed_given = true;
        },
        "Random seed");
  };

  auto* train_cmd = app.add_subcommand("train", "Fine-tune a model");
  train_cmd->add_option("--config", o.config, "Config file")->required();
  train_cmd->add_option("--resume", o.resume, "Checkpoint directory to resume from");
  train_cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
  add_sets(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a test set");
  eval_cmd->add_option("--model", o.model, "Checkpoint directory or weights archive")->required();
  eval_cmd->add_option("--data", o.data, "Directory with lr/ (and gt/) PNGs, or ground-truth PNGs")->required();
  eval_cmd->add_option("--metrics", o.metrics, "Comma-separated metric ids");
  eval_cmd->add_option("--out", o.out, "Report CSV")->required();
  eval_cmd->add_option("--config", o.config, "Config file (default: the checkpoint's config.resolved)");
  add_sets(eval_cmd);
  add_seed(eval_cmd);

  auto* analyze_cmd = app.add_subcommand("analyze", "Band-SSIM analysis along the denoising trajectory");
  analyze_cmd->add_option("--model", o.model, "Checkpoint directory or weights archive")->required();
  analyze_cmd->add_option("--lr", o.lr, "Low-resolution input PNG")->required();
  analyze_cmd->add_option("--gt", o.gt, "Ground-truth PNG")->required();
  analyze_cmd->add_option("--out", o.out, "Trajectory CSV")->required();
  analyze_cmd->add_option("--plot", o.plot, "Optional PNG plot");
  analyze_cmd->add_option("--config", o.config, "Config file (default: the checkpoint's config.resolved)");
  add_sets(analyze_cmd);
  add_seed(analyze_cmd);

  auto* degrade_cmd = app.add_subcommand("degrade", "Synthesize LR/GT pairs");
  degrade_cmd->add_option("--in", o.in, "Directory of ground-truth PNGs")->required();
  degrade_cmd->add_option("--out", o.out, "Output directory")->required();
  degrade_cmd->add_option("--config", o.config, "Config file")->required();
  add_sets(degrade_cmd);
  add_seed(degrade_cmd);

  auto* export_cmd = app.add_subcommand("export-ema", "Write a checkpoint's EMA weights as a standalone archive");
  export_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  export_cmd->add_option("--out", o.out, "Output weights archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return 1;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*analyze_cmd) return cmd_analyze(o);
    if (*degrade_cmd) return cmd_degrade(o);
    if (*export_cmd) return cmd_export_ema(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace rfsr
