#include "rfsr/ssim.hpp"

#include <cmath>
#include <vector>

#include "rfsr/errors.hpp"
#include "rfsr/kernels.hpp"

namespace rfsr {

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

double global_ssim(std::span<const double> a, std::span<const double> b, double c1, double c2) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

double ssim_planes(std::span<const double> a, std::span<const double> b, int channels, int height, int width,
                   const SsimParams& p) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (a.size() != b.size() || a.size() != plane * channels) throw DimensionError("ssim: shape mismatch");
  if (plane == 0) throw DimensionError("ssim: empty image");
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  double total = 0.0;
  if (height < p.window || width < p.window) {
    for (int c = 0; c < channels; ++c) total += global_ssim(a.subspan(c * plane, plane), b.subspan(c * plane, plane), c1, c2);
    return total / channels;
  }

  const auto taps = gaussian_taps(p.window, p.sigma);
  const std::size_t valid = static_cast<std::size_t>(height - p.window + 1) * (width - p.window + 1);
  std::vector<double> mu_a(valid), mu_b(valid), e_aa(valid), e_bb(valid), e_ab(valid);
  std::vector<double> aa(plane), bb(plane), ab(plane);
  for (int c = 0; c < channels; ++c) {
    auto pa = a.subspan(c * plane, plane);
    auto pb = b.subspan(c * plane, plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    kernels::parallel::filter_valid(pa, height, width, taps, mu_a);
    kernels::parallel::filter_valid(pb, height, width, taps, mu_b);
    kernels::parallel::filter_valid(aa, height, width, taps, e_aa);
    kernels::parallel::filter_valid(bb, height, width, taps, e_bb);
    kernels::parallel::filter_valid(ab, height, width, taps, e_ab);
    total += kernels::parallel::ssim_map_mean(mu_a, mu_b, e_aa, e_bb, e_ab, c1, c2);
  }
  return total / channels;
}

double ssim(const Image& a, const Image& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  return ssim_planes(a.data(), b.data(), Image::kChannels, a.height(), a.width(), params);
}

BandSimilarity band_ssim(const Image& a, const Image& b, const SsimParams& params) {
  require_same_shape(a, b, "band_ssim");
  const auto da = dwt_forward(a);
  const auto db = dwt_forward(b);
  auto band = [&](const Subband& x, const Subband& y, double gain, double offset) {
    std::vector<double> sx(x.data.size()), sy(y.data.size());
    for (std::size_t i = 0; i < sx.size(); ++i) {
      sx[i] = x.data[i] * gain + offset;
      sy[i] = y.data[i] * gain + offset;
    }
    return ssim_planes(sx, sy, Image::kChannels, x.height, x.width, params);
  };
  BandSimilarity out;
  out.ll_ssim = band(da.ll, db.ll, 0.5, 0.0);
  out.high_ssim = (band(da.lh, db.lh, 0.5, 0.5) + band(da.hl, db.hl, 0.5, 0.5) + band(da.hh, db.hh, 0.5, 0.5)) / 3.0;
  return out;
}

double psnr(const Image& a, const Image& b, double cap_db) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(1.0 / mse));
}

}  // namespace rfsr
