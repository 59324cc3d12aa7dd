#pragma once

#include <span>

#include "rfsr/dwt.hpp"
#include "rfsr/image.hpp"

namespace rfsr {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Gaussian-windowed SSIM over the valid region, averaged over positions and
// channels. Images smaller than the window use global statistics instead.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

// Same, on raw planar buffers of `channels` planes of height x width.
double ssim_planes(std::span<const double> a, std::span<const double> b, int channels, int height, int width,
                   const SsimParams& params = {});

struct BandSimilarity {
  double ll_ssim = 0.0;
  double high_ssim = 0.0;  // mean over LH, HL, HH
};

// SSIM per Haar band. LL is divided by 2 and detail bands are mapped from
// [-1,1] to [0,1] so the unit dynamic range holds.
BandSimilarity band_ssim(const Image& a, const Image& b, const SsimParams& params = {});

double psnr(const Image& a, const Image& b, double cap_db = 100.0);

}  // namespace rfsr
