#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rfsr/data.hpp"
#include "rfsr/diffusion.hpp"
#include "rfsr/image.hpp"
#include "rfsr/ssim.hpp"
#include "rfsr/style.hpp"

namespace rfsr {

// Anything that maps an LR image to an SR image of a requested size.
class Restorer {
 public:
  virtual ~Restorer() = default;
  virtual std::string id() const = 0;
  virtual Image restore(const Image& lr, const Caption& caption, int out_height, int out_width,
                        std::uint64_t seed) const = 0;
};

// Full st_latest-step DDIM inference from a seeded latent.
class ModelRestorer final : public Restorer {
 public:
  explicit ModelRestorer(const DiffusionModel& model, std::string id = {});
  std::string id() const override { return id_; }
  Image restore(const Image& lr, const Caption& caption, int out_height, int out_width,
                std::uint64_t seed) const override;

 private:
  const DiffusionModel& model_;
  std::string id_;
};

class MetricAdapter {
 public:
  virtual ~MetricAdapter() = default;
  virtual std::string id() const = 0;
  virtual bool reference_based() const = 0;
  // gt is null for no-reference metrics.
  virtual double compute(const Image& sr, const Image* gt) const = 0;
};

struct MetricOptions {
  // Weight archives of the external adapters by metric id. Missing entries
  // fall back to $RFSR_CACHE/<id>.rfsr.
  std::map<std::string, std::filesystem::path> weights;
  ExtractorConfig lpips_extractor;
};

// ssim, psnr (native); lpips (channel-normalised feature distance on the
// configured extractor); clipiqa, maniqa, musiq, aesthetic (scoring-head
// adapters). Unknown ids raise ConfigError, absent weights ModelError.
std::unique_ptr<MetricAdapter> make_metric(const std::string& id, const MetricOptions& options = {});
std::vector<std::string> parse_metric_list(const std::string& comma_separated);

struct EvalItem {
  std::string id;
  Image lr;
  std::optional<Image> gt;
  Caption caption;
};

// <dir>/lr/*.png with optional same-named <dir>/gt/*.png; when there is no
// lr/ directory, <dir>/*.png are ground truths degraded with a bicubic
// downscale by `scale`.
std::vector<EvalItem> load_eval_set(const std::filesystem::path& dir, int scale, const CaptionProvider& captions);

struct EvalOptions {
  std::uint64_t seed = 0;
  int scale = 4;
  std::string dataset_id;
  std::string config_hash;
};

struct EvalRow {
  std::string image_id;
  std::vector<std::optional<double>> values;  // one per metric, absent on failure
};

struct EvalReport {
  std::string dataset_id;
  std::string model_id;
  std::string config_hash;
  std::vector<std::string> metrics;
  std::vector<EvalRow> rows;
  std::vector<std::optional<double>> means;  // mean of the finite per-image values
};

// Restores every item (in parallel), computes each metric and aggregates.
// Adapter failures are recorded as missing and logged.
EvalReport evaluate(const Restorer& restorer, const std::vector<EvalItem>& items,
                    const std::vector<const MetricAdapter*>& metrics, const EvalOptions& options);

// CSV: "# key=value" metadata lines, header "image_id,<metrics>", one row
// per image and a final "mean" row. Missing values are empty fields.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_csv(const std::filesystem::path& path);

struct TrajectoryRecord {
  int st = 0;
  int t = 0;
  double ll_ssim = 0.0;
  double high_ssim = 0.0;
};

struct AnalyzeOptions {
  std::uint64_t seed = 0;
  Caption caption;
};

// Decodes the clean prediction at every sampling step and compares its Haar
// bands with gt.
std::vector<TrajectoryRecord> analyze_trajectory(const DiffusionModel& model, const Image& lr, const Image& gt,
                                                 const AnalyzeOptions& options = {});

// Same analysis for an externally supplied sequence (one image per step).
std::vector<TrajectoryRecord> analyze_images(const TimestepSchedule& schedule, const std::vector<Image>& images,
                                             const Image& gt);

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);
// Line plot of ll_ssim (blue) and high_ssim (red) against st.
void write_trajectory_plot(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);

}  // namespace rfsr
