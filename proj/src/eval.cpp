#include "rfsr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/image_io.hpp"
#include "rfsr/resample.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

namespace fs = std::filesystem;

ModelRestorer::ModelRestorer(const DiffusionModel& model, std::string id)
    : model_(model), id_(id.empty() ? model.kind() : std::move(id)) {}

Image ModelRestorer::restore(const Image& lr, const Caption& caption, int out_height, int out_width,
                             std::uint64_t seed) const {
  ad::NoGradGuard no_grad;
  Conditioning cond;
  cond.lr_image = lr;
  cond.caption = caption;
  const auto z = sample_latent(model_.latent_shape(out_height, out_width), seed);
  return to_image(rollout_to(model_, z, model_.schedule().st_latest, cond, true).image);
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

class SsimMetric final : public MetricAdapter {
 public:
  std::string id() const override { return "ssim"; }
  bool reference_based() const override { return true; }
  double compute(const Image& sr, const Image* gt) const override { return ssim(sr, *gt); }
};

class PsnrMetric final : public MetricAdapter {
 public:
  std::string id() const override { return "psnr"; }
  bool reference_based() const override { return true; }
  double compute(const Image& sr, const Image* gt) const override { return psnr(sr, *gt); }
};

// Squared distance between channel-normalised features, averaged over
// positions and summed over layers (LPIPS without the learned weights).
class FeatureDistanceMetric final : public MetricAdapter {
 public:
  explicit FeatureDistanceMetric(std::shared_ptr<FeatureExtractor> extractor) : extractor_(std::move(extractor)) {}
  std::string id() const override { return "lpips"; }
  bool reference_based() const override { return true; }
  double compute(const Image& sr, const Image* gt) const override {
    ad::NoGradGuard no_grad;
    const auto a = extract_features(extractor_.get(), sr);
    const auto b = extract_features(extractor_.get(), *gt);
    double total = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      const auto& fa = a.layers[l];
      const int c = fa.dim(0);
      const std::size_t hw = static_cast<std::size_t>(fa.dim(1)) * fa.dim(2);
      const auto va = fa.values(), vb = b.layers[l].values();
      double layer = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        double na = 0.0, nb = 0.0;
        for (int k = 0; k < c; ++k) {
          na += va[k * hw + p] * va[k * hw + p];
          nb += vb[k * hw + p] * vb[k * hw + p];
        }
        na = std::sqrt(na) + 1e-10;
        nb = std::sqrt(nb) + 1e-10;
        for (int k = 0; k < c; ++k) {
          const double d = va[k * hw + p] / na - vb[k * hw + p] / nb;
          layer += d * d;
        }
      }
      total += layer / static_cast<double>(hw);
    }
    return total;
  }

 private:
  std::shared_ptr<FeatureExtractor> extractor_;
};

class ScoringHeadMetric final : public MetricAdapter {
 public:
  ScoringHeadMetric(std::string id, std::unique_ptr<ClipIqaAdapter> head) : id_(std::move(id)), head_(std::move(head)) {}
  std::string id() const override { return id_; }
  bool reference_based() const override { return false; }
  double compute(const Image& sr, const Image*) const override {
    ad::NoGradGuard no_grad;
    return head_->score(to_tensor(sr), {}).item();
  }

 private:
  std::string id_;
  std::unique_ptr<ClipIqaAdapter> head_;
};

}  // namespace

std::unique_ptr<MetricAdapter> make_metric(const std::string& id, const MetricOptions& options) {
  if (id == "ssim") return std::make_unique<SsimMetric>();
  if (id == "psnr") return std::make_unique<PsnrMetric>();
  if (id == "lpips") return std::make_unique<FeatureDistanceMetric>(make_extractor(options.lpips_extractor));
  if (id == "clipiqa" || id == "maniqa" || id == "musiq" || id == "aesthetic") {
    auto it = options.weights.find(id);
    const fs::path path = it != options.weights.end() ? it->second : fs::path(id + ".rfsr");
    auto head = std::make_unique<ClipIqaAdapter>(path);
    if (!head->loaded())
      throw ModelError(fmt::format("metric '{}' needs its weights archive ('{}', also searched under RFSR_CACHE)", id,
                                   path.string()));
    return std::make_unique<ScoringHeadMetric>(id, std::move(head));
  }
  throw ConfigError(fmt::format("unknown metric '{}'", id));
}

std::vector<std::string> parse_metric_list(const std::string& comma_separated) {
  std::vector<std::string> out;
  std::stringstream ss(comma_separated);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty metric list");
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and evaluation

std::vector<EvalItem> load_eval_set(const fs::path& dir, int scale, const CaptionProvider& captions) {
  if (!fs::is_directory(dir)) throw ConfigError(fmt::format("eval data '{}' is not a directory", dir.string()));
  std::vector<EvalItem> items;
  if (fs::is_directory(dir / "lr")) {
    for (const auto& path : list_images({dir / "lr"})) {
      EvalItem item;
      item.id = path.stem().string();
      item.lr = read_png(path);
      const auto gt_path = dir / "gt" / path.filename();
      if (fs::exists(gt_path)) item.gt = read_png(gt_path);
      item.caption = captions.caption_of(item.lr, item.id);
      items.push_back(std::move(item));
    }
  } else {
    for (const auto& path : list_images({dir})) {
      EvalItem item;
      item.id = path.stem().string();
      item.gt = pad_to_even(read_png(path));
      item.lr = degrade(*item.gt, DegradationConfig::bicubic_only(scale), 0);
      item.caption = captions.caption_of(item.lr, item.id);
      items.push_back(std::move(item));
    }
  }
  if (items.empty()) throw ConfigError(fmt::format("no PNG images found in '{}'", dir.string()));
  return items;
}

EvalReport evaluate(const Restorer& restorer, const std::vector<EvalItem>& items,
                    const std::vector<const MetricAdapter*>& metrics, const EvalOptions& options) {
  EvalReport report;
  report.dataset_id = options.dataset_id;
  report.model_id = restorer.id();
  report.config_hash = options.config_hash;
  for (const auto* m : metrics) report.metrics.push_back(m->id());
  report.rows.resize(items.size());

  const long n = static_cast<long>(items.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& item = items[static_cast<std::size_t>(i)];
    auto& row = report.rows[static_cast<std::size_t>(i)];
    row.image_id = item.id;
    row.values.assign(metrics.size(), std::nullopt);
    Image sr;
    try {
      const int h = item.gt ? item.gt->height() : item.lr.height() * options.scale;
      const int w = item.gt ? item.gt->width() : item.lr.width() * options.scale;
      sr = restorer.restore(item.lr, item.caption, h, w, mix_seed(options.seed, static_cast<std::uint64_t>(i)));
    } catch (const std::exception& e) {
      log_warning(fmt::format("eval: restoring '{}' failed: {}", item.id, e.what()));
      continue;
    }
    for (std::size_t k = 0; k < metrics.size(); ++k) {
      const auto* metric = metrics[k];
      if (metric->reference_based() && !item.gt) {
        log_warning(fmt::format("eval: '{}' has no ground truth for {}", item.id, metric->id()));
        continue;
      }
      try {
        const double v = metric->compute(sr, item.gt ? &*item.gt : nullptr);
        if (std::isfinite(v))
          row.values[k] = v;
        else
          log_warning(fmt::format("eval: {} on '{}' is not finite", metric->id(), item.id));
      } catch (const std::exception& e) {
        log_warning(fmt::format("eval: {} on '{}' failed: {}", metric->id(), item.id, e.what()));
      }
    }
  }

  report.means.assign(metrics.size(), std::nullopt);
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    double sum = 0.0;
    int count = 0;
    for (const auto& row : report.rows)
      if (row.values[k]) {
        sum += *row.values[k];
        ++count;
      }
    if (count > 0) report.means[k] = sum / count;
  }
  return report;
}

namespace {

std::string format_value(const std::optional<double>& v) { return v ? fmt::format("{:.10g}", *v) : std::string(); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_report_csv(const fs::path& path, const EvalReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write report '{}'", path.string()));
  out << "# dataset=" << report.dataset_id << "\n# model=" << report.model_id << "\n# config_hash=" << report.config_hash
      << "\n";
  out << "image_id";
  for (const auto& m : report.metrics) out << "," << m;
  out << "\n";
  for (const auto& row : report.rows) {
    out << row.image_id;
    for (const auto& v : row.values) out << "," << format_value(v);
    out << "\n";
  }
  out << "mean";
  for (const auto& v : report.means) out << "," << format_value(v);
  out << "\n";
}

EvalReport read_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read report '{}'", path.string()));
  EvalReport report;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      const auto eq = line.find('=');
      const auto key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "dataset") report.dataset_id = value;
      if (key == "model") report.model_id = value;
      if (key == "config_hash") report.config_hash = value;
      continue;
    }
    auto fields = split_csv(line);
    if (!header) {
      report.metrics.assign(fields.begin() + 1, fields.end());
      header = true;
      continue;
    }
    std::vector<std::optional<double>> values;
    for (std::size_t k = 1; k < fields.size(); ++k)
      values.push_back(fields[k].empty() ? std::nullopt : std::optional<double>(std::stod(fields[k])));
    values.resize(report.metrics.size());
    if (fields[0] == "mean")
      report.means = std::move(values);
    else
      report.rows.push_back({fields[0], std::move(values)});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Trajectory analysis

std::vector<TrajectoryRecord> analyze_trajectory(const DiffusionModel& model, const Image& lr, const Image& gt,
                                                 const AnalyzeOptions& options) {
  Conditioning cond;
  cond.lr_image = lr;
  cond.caption = options.caption;
  const auto z = sample_latent(model.latent_shape(gt.height(), gt.width()), options.seed);
  const auto traj = rollout_trajectory(model, z, cond, true);
  std::vector<TrajectoryRecord> out;
  for (const auto& step : traj) {
    const auto bands = band_ssim(*step.decoded, gt);
    out.push_back({step.st, step.t, bands.ll_ssim, bands.high_ssim});
  }
  return out;
}

std::vector<TrajectoryRecord> analyze_images(const TimestepSchedule& schedule, const std::vector<Image>& images,
                                             const Image& gt) {
  if (static_cast<int>(images.size()) != schedule.st_latest)
    throw DimensionError(fmt::format("trajectory has {} images, schedule has {} steps", images.size(),
                                     schedule.st_latest));
  std::vector<TrajectoryRecord> out;
  for (int st = 1; st <= schedule.st_latest; ++st) {
    const auto bands = band_ssim(images[static_cast<std::size_t>(st - 1)], gt);
    out.push_back({st, timestep_of(schedule, st), bands.ll_ssim, bands.high_ssim});
  }
  return out;
}

void write_trajectory_csv(const fs::path& path, const std::vector<TrajectoryRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "st,t,ll_ssim,high_ssim\n";
  for (const auto& r : records) out << fmt::format("{},{},{:.10g},{:.10g}\n", r.st, r.t, r.ll_ssim, r.high_ssim);
}

void write_trajectory_plot(const fs::path& path, const std::vector<TrajectoryRecord>& records) {
  constexpr int kW = 640, kH = 400, kMargin = 40;
  Image canvas(kH, kW, 1.0);
  auto put = [&](int x, int y, const double (&rgb)[3]) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (xx >= 0 && xx < kW && yy >= 0 && yy < kH)
          for (int c = 0; c < 3; ++c) canvas.at(c, yy, xx) = rgb[c];
      }
  };
  auto line = [&](double x0, double y0, double x1, double y1, const double (&rgb)[3]) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double f = static_cast<double>(i) / steps;
      put(static_cast<int>(std::lround(x0 + f * (x1 - x0))), static_cast<int>(std::lround(y0 + f * (y1 - y0))), rgb);
    }
  };
  const double black[3] = {0, 0, 0}, grey[3] = {0.85, 0.85, 0.85}, blue[3] = {0.1, 0.3, 0.9}, red[3] = {0.9, 0.2, 0.1};

  double lo = 0.0;
  for (const auto& r : records) lo = std::min({lo, r.ll_ssim, r.high_ssim});
  const int n = std::max<int>(1, static_cast<int>(records.size()) - 1);
  auto px = [&](int i) { return kMargin + static_cast<double>(i) / n * (kW - 2 * kMargin); };
  auto py = [&](double v) { return kH - kMargin - (v - lo) / (1.0 - lo) * (kH - 2 * kMargin); };

  for (int g = 0; g <= 4; ++g) {
    const double v = lo + (1.0 - lo) * g / 4.0;
    line(kMargin, py(v), kW - kMargin, py(v), grey);
  }
  line(kMargin, kH - kMargin, kW - kMargin, kH - kMargin, black);
  line(kMargin, kMargin, kMargin, kH - kMargin, black);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const int a = static_cast<int>(i) - 1, b = static_cast<int>(i);
    line(px(a), py(records[i - 1].ll_ssim), px(b), py(records[i].ll_ssim), blue);
    line(px(a), py(records[i - 1].high_ssim), px(b), py(records[i].high_ssim), red);
  }
  // Legend swatches: blue = LL, red = high bands.
  line(kW - 120, 20, kW - 90, 20, blue);
  line(kW - 60, 20, kW - 30, 20, red);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_png(path, canvas);
}

}  // namespace rfsr
