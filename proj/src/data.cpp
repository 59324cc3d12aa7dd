#include "rfsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/core.h>

#include "rfsr/errors.hpp"
#include "rfsr/image_io.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

std::string_view stage_kind_name(StageKind kind) {
  switch (kind) {
    case StageKind::kBlur: return "blur";
    case StageKind::kResize: return "resize";
    case StageKind::kNoise: return "noise";
    case StageKind::kJpeg: return "jpeg";
  }
  return "?";
}

StageKind parse_stage_kind(std::string_view name) {
  if (name == "blur") return StageKind::kBlur;
  if (name == "resize") return StageKind::kResize;
  if (name == "noise") return StageKind::kNoise;
  if (name == "jpeg") return StageKind::kJpeg;
  throw ConfigError(fmt::format("unknown degradation stage '{}'", name));
}

DegradationConfig DegradationConfig::defaults() {
  DegradationConfig cfg;
  auto stage = [](StageKind k) {
    DegradationStage s;
    s.kind = k;
    return s;
  };
  cfg.first = {stage(StageKind::kBlur), stage(StageKind::kResize), stage(StageKind::kNoise),
               stage(StageKind::kJpeg)};
  cfg.second = cfg.first;
  // The second pass is milder, as in the Real-ESRGAN recipe.
  cfg.second[0].sigma = {0.2, 1.5};
  cfg.second[1].scale = {0.3, 1.2};
  cfg.second[2].gaussian_sigma = {1.0 / 255.0, 25.0 / 255.0};
  cfg.second[2].poisson_scale = {0.05, 2.5};
  return cfg;
}

DegradationConfig DegradationConfig::bicubic_only(int scale) {
  DegradationConfig cfg = defaults();
  for (auto& s : cfg.first) s.enabled = false;
  for (auto& s : cfg.second) s.enabled = false;
  cfg.scale = scale;
  return cfg;
}

void DegradationConfig::validate() const {
  if (scale < 1) throw ConfigError(fmt::format("degradation scale must be >= 1, got {}", scale));
  auto check = [](const Range& r, const char* what, double lo, double hi) {
    if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
      throw ConfigError(fmt::format("degradation {} range [{}, {}] invalid (allowed within [{}, {}])", what, r.lo,
                                    r.hi, lo, hi));
  };
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("degradation {} = {} outside [0,1]", what, p));
  };
  for (const auto* list : {&first, &second}) {
    for (const auto& s : *list) {
      switch (s.kind) {
        case StageKind::kBlur:
          check(s.sigma, "blur sigma", 0.0, 1e3);
          prob(s.aniso_prob, "aniso_prob");
          if (s.kernel_size < 1 || s.kernel_size % 2 == 0)
            throw ConfigError(fmt::format("blur kernel_size must be odd and positive, got {}", s.kernel_size));
          break;
        case StageKind::kResize:
          check(s.scale, "resize scale", 1e-3, 1e3);
          if (s.modes.empty()) throw ConfigError("resize stage needs at least one interpolation mode");
          break;
        case StageKind::kNoise:
          check(s.gaussian_sigma, "gaussian sigma", 0.0, 1e3);
          check(s.poisson_scale, "poisson scale", 0.0, 1e3);
          prob(s.poisson_prob, "poisson_prob");
          prob(s.gray_prob, "gray_prob");
          break;
        case StageKind::kJpeg: check(s.quality, "jpeg quality", 1.0, 100.0); break;
      }
    }
  }
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double uniform(std::mt19937_64& rng, const Range& r) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return r.lo + (r.hi - r.lo) * u(rng);
}

bool coin(std::mt19937_64& rng, double p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p;
}

Image add_noise(const Image& img, const DegradationStage& s, std::mt19937_64& rng) {
  const bool poisson = coin(rng, s.poisson_prob);
  const bool gray = coin(rng, s.gray_prob);
  Image out = img;
  const std::size_t n = img.plane_size();
  if (!poisson) {
    const double sigma = uniform(rng, s.gaussian_sigma);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> shared;
    if (gray) {
      shared.resize(n);
      for (auto& v : shared) v = n01(rng);
    }
    for (int c = 0; c < Image::kChannels; ++c) {
      auto p = out.plane(c);
      for (std::size_t i = 0; i < n; ++i) p[i] += sigma * (gray ? shared[i] : n01(rng));
    }
  } else {
    const double scale = uniform(rng, s.poisson_scale);
    auto shot = [&](double v) {
      std::poisson_distribution<int> pd(std::max(v, 0.0) * 255.0);
      return pd(rng) / 255.0 - v;
    };
    if (gray) {
      for (std::size_t i = 0; i < n; ++i) {
        const double lum = (img.plane(0)[i] + img.plane(1)[i] + img.plane(2)[i]) / 3.0;
        const double d = scale * shot(lum);
        for (int c = 0; c < Image::kChannels; ++c) out.plane(c)[i] += d;
      }
    } else {
      for (int c = 0; c < Image::kChannels; ++c) {
        auto p = out.plane(c);
        for (std::size_t i = 0; i < n; ++i) p[i] += scale * shot(img.plane(c)[i]);
      }
    }
  }
  return clamp01(out);
}

Image apply_stage(const Image& img, const DegradationStage& s, std::mt19937_64& rng) {
  switch (s.kind) {
    case StageKind::kBlur: {
      const double sx = uniform(rng, s.sigma);
      if (coin(rng, s.aniso_prob)) {
        const double sy = uniform(rng, s.sigma);
        const double theta = uniform(rng, {0.0, std::numbers::pi});
        return gaussian_blur(img, sx, sy, theta, s.kernel_size);
      }
      return gaussian_blur(img, sx, sx, 0.0, s.kernel_size);
    }
    case StageKind::kResize: {
      const double f = uniform(rng, s.scale);
      std::uniform_int_distribution<std::size_t> pick(0, s.modes.size() - 1);
      const Interpolation mode = s.modes[pick(rng)];
      const int h = std::max(2, static_cast<int>(std::lround(img.height() * f)));
      const int w = std::max(2, static_cast<int>(std::lround(img.width() * f)));
      return clamp01(resize(img, h, w, mode));
    }
    case StageKind::kNoise: return add_noise(img, s, rng);
    case StageKind::kJpeg: {
      const int q = std::clamp(static_cast<int>(std::lround(uniform(rng, s.quality))), 1, 100);
      return jpeg_roundtrip(img, q);
    }
  }
  return img;
}

}  // namespace

std::vector<double> gaussian_kernel2d(double sigma_x, double sigma_y, double theta, int size) {
  const int r = size / 2;
  const double c = std::cos(theta), s = std::sin(theta);
  // Inverse covariance of R diag(sx^2, sy^2) R^T.
  const double ix = 1.0 / (sigma_x * sigma_x), iy = 1.0 / (sigma_y * sigma_y);
  const double a = c * c * ix + s * s * iy;
  const double b = c * s * (ix - iy);
  const double d = s * s * ix + c * c * iy;
  std::vector<double> k(static_cast<std::size_t>(size) * size);
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y));
      k[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
      total += v;
    }
  for (auto& v : k) v /= total;
  return k;
}

Image gaussian_blur(const Image& img, double sigma_x, double sigma_y, double theta, int max_kernel) {
  const double smax = std::max(sigma_x, sigma_y);
  if (smax <= 1e-6) return img;
  const int size = std::min(max_kernel, 2 * static_cast<int>(std::ceil(3.0 * smax)) + 1);
  if (size <= 1) return img;
  const auto k = gaussian_kernel2d(std::max(sigma_x, 1e-6), std::max(sigma_y, 1e-6), theta, size);
  const int r = size / 2, h = img.height(), w = img.width();
  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = reflect_index(y + dy, h);
          const double* krow = &k[static_cast<std::size_t>(dy + r) * size + r];
          for (int dx = -r; dx <= r; ++dx) acc += krow[dx] * img.at(c, yy, reflect_index(x + dx, w));
        }
        out.at(c, y, x) = acc;
      }
  return out;
}

Image degrade(const Image& gt, const DegradationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (gt.empty()) throw DimensionError("degrade: empty image");
  std::mt19937_64 rng(seed);
  Image img = gt;
  for (const auto& s : cfg.first)
    if (s.enabled) img = apply_stage(img, s, rng);
  if (cfg.second_order)
    for (const auto& s : cfg.second)
      if (s.enabled) img = apply_stage(img, s, rng);
  const int h = (gt.height() + cfg.scale - 1) / cfg.scale;
  const int w = (gt.width() + cfg.scale - 1) / cfg.scale;
  return clamp01(resize(img, h, w, Interpolation::kBicubic));
}

// ---------------------------------------------------------------------------
// Captions

std::string image_key(const Image& image) {
  const auto rgb = to_rgb8(image);
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(rgb.data()), rgb.size())));
}

DapeCaptionProvider::DapeCaptionProvider(const std::filesystem::path& tag_cache) {
  std::ifstream in(tag_cache);
  if (!in) throw ConfigError(fmt::format("cannot open DAPE tag cache '{}'", tag_cache.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    std::string tags = line.substr(comma + 1);
    if (tags.size() >= 2 && tags.front() == '"' && tags.back() == '"') tags = tags.substr(1, tags.size() - 2);
    tags_.emplace_back(line.substr(0, comma), std::move(tags));
  }
}

Caption DapeCaptionProvider::caption_of(const Image& lr, const std::string& source_id) const {
  auto lookup = [&](const std::string& key) -> const std::string* {
    for (const auto& [k, v] : tags_)
      if (k == key) return &v;
    return nullptr;
  };
  if (!source_id.empty())
    if (const auto* t = lookup(source_id)) return {*t};
  const auto key = image_key(lr);
  if (const auto* t = lookup(key)) return {*t};
  throw ModelError(fmt::format("DAPE tag cache has no entry for source '{}' or image {}", source_id, key));
}

std::shared_ptr<CaptionProvider> make_caption_provider(const CaptionConfig& config) {
  if (config.provider == "none") return std::make_shared<NoCaptionProvider>();
  if (config.provider == "constant") return std::make_shared<ConstantCaptionProvider>(config.text);
  if (config.provider == "dape") return std::make_shared<DapeCaptionProvider>(config.tag_cache);
  throw ConfigError(fmt::format("unknown caption provider '{}'", config.provider));
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<std::filesystem::path> list_images(const std::vector<std::filesystem::path>& roots) {
  std::vector<std::filesystem::path> out;
  for (const auto& root : roots) {
    if (!std::filesystem::is_directory(root))
      throw ConfigError(fmt::format("data root '{}' is not a directory", root.string()));
    for (const auto& e : std::filesystem::directory_iterator(root)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (ext == ".png") out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image synthetic_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(height, width);
  for (int c = 0; c < Image::kChannels; ++c) {
    const double base = 0.2 + 0.6 * u(rng), gx = 0.4 * (u(rng) - 0.5), gy = 0.4 * (u(rng) - 0.5);
    const double fx = 2.0 + 10.0 * u(rng), fy = 2.0 + 10.0 * u(rng), amp = 0.15 * u(rng), ph = 6.28 * u(rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double xn = static_cast<double>(x) / width, yn = static_cast<double>(y) / height;
        img.at(c, y, x) = base + gx * (xn - 0.5) + gy * (yn - 0.5) + amp * std::sin(fx * xn * 6.28 + fy * yn * 6.28 + ph);
      }
  }
  const int discs = 3 + static_cast<int>(u(rng) * 4);
  for (int d = 0; d < discs; ++d) {
    const double cx = u(rng) * width, cy = u(rng) * height, r = (0.05 + 0.2 * u(rng)) * std::min(height, width);
    const double col[3] = {u(rng), u(rng), u(rng)};
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r)
          for (int c = 0; c < Image::kChannels; ++c) img.at(c, y, x) = col[c];
  }
  return clamp01(img);
}

Dataset::Dataset(DatasetConfig config) : config_(std::move(config)) {
  if (config_.crop < 2 || config_.crop % 2) throw ConfigError(fmt::format("crop {} must be even and >= 2", config_.crop));
  config_.degradation.validate();
  if (config_.synthetic <= 0) {
    sources_ = list_images(config_.roots);
    if (sources_.empty()) throw ConfigError("dataset is empty: no PNG images under the configured roots");
  } else if (!config_.roots.empty()) {
    throw ConfigError("data.roots and data.synthetic are mutually exclusive");
  }
  captions_ = make_caption_provider(config_.caption);
}

Image Dataset::load_source(std::size_t source, std::string& id) const {
  if (config_.synthetic > 0) {
    id = fmt::format("synthetic_{:05d}", source);
    const int size = config_.crop + config_.crop / 4;
    return synthetic_image(size, size, mix_seed(config_.seed, source, 0x5e));
  }
  id = sources_[source].stem().string();
  return read_png(sources_[source]);
}

TrainPair Dataset::at(std::size_t index) const {
  const std::size_t n = config_.synthetic > 0 ? static_cast<std::size_t>(config_.synthetic) : sources_.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix_seed(config_.seed, index / n, 0x5f));
  std::shuffle(perm.begin(), perm.end(), shuffle_rng);

  Image src;
  std::string id;
  for (std::size_t k = 0; k < n && src.empty(); ++k) {
    const std::size_t s = perm[(index % n + k) % n];
    try {
      src = load_source(s, id);
    } catch (const std::exception& e) {
      log_warning(fmt::format("skipping unreadable image '{}': {}", sources_[s].string(), e.what()));
    }
  }
  if (src.empty()) throw IoError("dataset: no readable source images");

  const int crop = config_.crop;
  src = reflect_pad_to(src, crop, crop);
  std::mt19937_64 rng(mix_seed(config_.seed, index, 0xc7));
  std::uniform_int_distribution<int> py(0, src.height() - crop), px(0, src.width() - crop);
  const int y0 = py(rng);
  const int x0 = px(rng);

  TrainPair pair;
  pair.gt = rfsr::crop(src, y0, x0, crop, crop);
  pair.seed = mix_seed(config_.seed, index);
  pair.lr = degrade(pair.gt, config_.degradation, pair.seed);
  pair.source_id = id;
  pair.caption = captions_->caption_of(pair.lr, id);
  return pair;
}

std::vector<TrainPair> Dataset::batch(std::size_t first, int count) const {
  std::vector<TrainPair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int b = 0; b < count; ++b) out.push_back(at(first + static_cast<std::size_t>(b)));
  return out;
}

}  // namespace rfsr
