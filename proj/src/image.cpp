#include "rfsr/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/core.h>

#include "rfsr/errors.hpp"

namespace rfsr {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw DimensionError("negative image size");
  data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
}

Image::Image(int height, int width, std::vector<double> planar)
    : height_(height), width_(width), data_(std::move(planar)) {
  if (height < 0 || width < 0 || data_.size() != static_cast<std::size_t>(kChannels) * height * width)
    throw DimensionError(fmt::format("planar buffer of {} values does not match 3x{}x{}", data_.size(), height, width));
}

double Image::mean() const {
  if (data_.empty()) return 0.0;
  double s = 0.0;
  for (double v : data_) s += v;
  return s / static_cast<double>(data_.size());
}

bool Image::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Image::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

void Image::check_valid() const {
  if (height_ % 2 != 0 || width_ % 2 != 0)
    throw DimensionError(fmt::format("image {}x{} has odd dimensions", height_, width_));
  if (!all_finite()) throw std::domain_error("image contains non-finite values");
  if (!in_unit_range()) throw std::domain_error("image values outside [0,1]");
}

bool same_shape(const Image& a, const Image& b) {
  return a.height() == b.height() && a.width() == b.width();
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!same_shape(a, b))
    throw DimensionError(fmt::format("{}: shape mismatch {}x{} vs {}x{}", what, a.height(), a.width(), b.height(),
                                     b.width()));
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Image reflect_pad_to(const Image& img, int min_height, int min_width) {
  const int h = std::max(img.height(), min_height);
  const int w = std::max(img.width(), min_width);
  if (h == img.height() && w == img.width()) return img;
  if (img.empty()) throw DimensionError("cannot pad an empty image");
  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = img.at(c, reflect_index(y, img.height()), reflect_index(x, img.width()));
  return out;
}

Image pad_to_even(const Image& img) {
  return reflect_pad_to(img, img.height() + img.height() % 2, img.width() + img.width() % 2);
}

Image crop(const Image& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || y0 + height > img.height() || x0 + width > img.width())
    throw DimensionError("crop window outside image");
  Image out(height, width);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace rfsr
