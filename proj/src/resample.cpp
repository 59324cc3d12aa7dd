#include "rfsr/resample.hpp"

#include <cmath>
#include <string>

#include <fmt/core.h>

#include "rfsr/dwt.hpp"
#include "rfsr/errors.hpp"

namespace rfsr {

Interpolation parse_interpolation(std::string_view name) {
  if (name == "area") return Interpolation::kArea;
  if (name == "bilinear") return Interpolation::kBilinear;
  if (name == "bicubic") return Interpolation::kBicubic;
  throw ConfigError(fmt::format("unknown interpolation '{}'", name));
}

std::string_view interpolation_name(Interpolation interp) {
  switch (interp) {
    case Interpolation::kArea: return "area";
    case Interpolation::kBilinear: return "bilinear";
    case Interpolation::kBicubic: return "bicubic";
  }
  return "?";
}

double cubic_kernel(double x) {
  const double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

double linear_kernel(double x) {
  const double t = std::abs(x);
  return t < 1.0 ? 1.0 - t : 0.0;
}

double box_kernel(double x) { return (x >= -0.5 && x < 0.5) ? 1.0 : 0.0; }

std::vector<double> resize_weights(int in_size, int out_size, Interpolation interp) {
  if (in_size <= 0 || out_size <= 0) throw DimensionError("resize_weights: sizes must be positive");
  double (*kernel)(double) = cubic_kernel;
  double radius = 2.0;
  if (interp == Interpolation::kBilinear) {
    kernel = linear_kernel;
    radius = 1.0;
  } else if (interp == Interpolation::kArea) {
    kernel = box_kernel;
    radius = 0.5;
  }
  const double scale = static_cast<double>(out_size) / in_size;
  const double shrink = std::min(scale, 1.0);
  const double support = radius / shrink;

  std::vector<double> w(static_cast<std::size_t>(out_size) * in_size, 0.0);
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(center - support)) - 1;
    const int last = static_cast<int>(std::ceil(center + support)) + 1;
    double total = 0.0;
    double* row = w.data() + static_cast<std::size_t>(i) * in_size;
    for (int j = first; j <= last; ++j) {
      const double k = kernel((center - j) * shrink) * shrink;
      if (k == 0.0) continue;
      int src = j;
      // symmetric boundary: -1 -> 0, n -> n-1
      const int period = 2 * in_size;
      src %= period;
      if (src < 0) src += period;
      if (src >= in_size) src = period - 1 - src;
      row[src] += k;
      total += k;
    }
    if (total == 0.0) throw DimensionError("resize_weights: empty kernel footprint");
    for (int j = 0; j < in_size; ++j) row[j] /= total;
  }
  return w;
}

ad::Tensor resize(const ad::Tensor& x, int out_height, int out_width, Interpolation interp) {
  if (x.shape().size() != 3) throw DimensionError("resize: expected (C,H,W)");
  const auto rows = resize_weights(x.dim(1), out_height, interp);
  const auto cols = resize_weights(x.dim(2), out_width, interp);
  return ad::resample(x, out_height, out_width, rows, cols);
}

Image resize(const Image& image, int out_height, int out_width, Interpolation interp) {
  if (image.height() == out_height && image.width() == out_width) return image;
  ad::NoGradGuard no_grad;
  return to_image(resize(to_tensor(image), out_height, out_width, interp));
}

}  // namespace rfsr
