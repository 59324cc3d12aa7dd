#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rfsr/image.hpp"
#include "rfsr/resample.hpp"
#include "rfsr/reward.hpp"

namespace rfsr {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

enum class StageKind { kBlur, kResize, kNoise, kJpeg };

std::string_view stage_kind_name(StageKind kind);
StageKind parse_stage_kind(std::string_view name);

// One degradation stage. Only the fields of its kind are read.
struct DegradationStage {
  StageKind kind = StageKind::kBlur;
  bool enabled = true;

  // blur: isotropic or anisotropic (rotated) Gaussian
  Range sigma{0.2, 3.0};
  double aniso_prob = 0.5;
  int kernel_size = 21;  // upper bound; shrunk to 2*ceil(3 sigma)+1

  // resize: factor relative to the current size
  Range scale{0.15, 1.5};
  std::vector<Interpolation> modes{Interpolation::kArea, Interpolation::kBilinear, Interpolation::kBicubic};

  // noise: additive Gaussian (sigma in [0,1] units) or Poisson (shot) noise
  Range gaussian_sigma{1.0 / 255.0, 30.0 / 255.0};
  Range poisson_scale{0.05, 3.0};
  double poisson_prob = 0.4;
  double gray_prob = 0.4;

  // jpeg
  Range quality{30.0, 95.0};
};

struct DegradationConfig {
  std::vector<DegradationStage> first;
  std::vector<DegradationStage> second;
  bool second_order = true;
  int scale = 4;

  // Real-ESRGAN-like defaults: blur, resize, noise, jpeg, twice.
  static DegradationConfig defaults();
  // Every stage disabled: output is the plain bicubic downscale.
  static DegradationConfig bicubic_only(int scale = 4);

  // Throws ConfigError on empty or inverted ranges.
  void validate() const;
};

// Applies the sampled stages (and the second pass when enabled), then a
// bicubic resize to ceil(H/scale) x ceil(W/scale) and a clamp to [0,1].
// Deterministic in (gt, cfg, seed).
Image degrade(const Image& gt, const DegradationConfig& cfg, std::uint64_t seed);

// Individual stages, exposed for tests.
Image gaussian_blur(const Image& img, double sigma_x, double sigma_y, double theta, int max_kernel);
std::vector<double> gaussian_kernel2d(double sigma_x, double sigma_y, double theta, int size);

// Caption providers: "none" (empty), "constant" (fixed text), "dape" (tags
// read from a cache produced by the external tagger).
class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::string kind() const = 0;
  // source_id is a lookup hint for cached providers; may be empty.
  virtual Caption caption_of(const Image& lr, const std::string& source_id) const = 0;
};

class NoCaptionProvider final : public CaptionProvider {
 public:
  std::string kind() const override { return "none"; }
  Caption caption_of(const Image&, const std::string&) const override { return {}; }
};

class ConstantCaptionProvider final : public CaptionProvider {
 public:
  explicit ConstantCaptionProvider(std::string text) : text_(std::move(text)) {}
  std::string kind() const override { return "constant"; }
  Caption caption_of(const Image&, const std::string&) const override { return {text_}; }

 private:
  std::string text_;
};

// Tag cache: CSV lines "key,tags" where key is either a source id or the
// hex64 hash of the LR image's 8-bit pixels (see image_key). Lookups try the
// source id first. A missing entry raises ModelError.
class DapeCaptionProvider final : public CaptionProvider {
 public:
  explicit DapeCaptionProvider(const std::filesystem::path& tag_cache);
  std::string kind() const override { return "dape"; }
  Caption caption_of(const Image& lr, const std::string& source_id) const override;

 private:
  std::vector<std::pair<std::string, std::string>> tags_;
};

std::string image_key(const Image& image);

struct CaptionConfig {
  std::string provider = "none";
  std::string text;
  std::filesystem::path tag_cache;
};
std::shared_ptr<CaptionProvider> make_caption_provider(const CaptionConfig& config);

struct TrainPair {
  Image lr;
  Image gt;
  Caption caption;
  std::string source_id;
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  std::vector<std::filesystem::path> roots;
  int synthetic = 0;  // procedural sources instead of files when > 0
  int crop = 512;
  DegradationConfig degradation = DegradationConfig::defaults();
  CaptionConfig caption;
  std::uint64_t seed = 0;
};

// Deterministic random-access pair source. Pair i uses the i-th entry of a
// seeded permutation of the sources (reshuffled every epoch), a random
// crop (after reflect padding when the source is smaller than the crop) and
// degrade() with a seed derived from (dataset seed, i).
class Dataset {
 public:
  explicit Dataset(DatasetConfig config);

  std::size_t source_count() const { return sources_.size(); }
  TrainPair at(std::size_t index) const;
  std::vector<TrainPair> batch(std::size_t first, int count) const;
  const DatasetConfig& config() const { return config_; }

 private:
  Image load_source(std::size_t source, std::string& id) const;

  DatasetConfig config_;
  std::vector<std::filesystem::path> sources_;
  std::shared_ptr<CaptionProvider> captions_;
};

// Procedural test image: smooth gradients, sinusoidal texture and discs.
Image synthetic_image(int height, int width, std::uint64_t seed);

// Sorted *.png files under the given roots (non-recursive per root).
std::vector<std::filesystem::path> list_images(const std::vector<std::filesystem::path>& roots);

}  // namespace rfsr
