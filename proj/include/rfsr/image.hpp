#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rfsr {

// A 3-channel image with real values, stored planar (channel, row, column).
// Canonical pixel range is [0,1]; adapters convert at the boundary.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> planar);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  double mean() const;
  bool all_finite() const;
  bool in_unit_range() const;

  // Throws DimensionError on odd sizes, std::domain_error on non-finite or
  // out-of-range values.
  void check_valid() const;

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

bool same_shape(const Image& a, const Image& b);
void require_same_shape(const Image& a, const Image& b, const char* what);

// Reflect-pads (mirror without edge repeat) so both sides are even.
Image pad_to_even(const Image& img);

// Reflect-pads to at least the given size, then returns the padded image.
Image reflect_pad_to(const Image& img, int min_height, int min_width);

Image crop(const Image& img, int y0, int x0, int height, int width);

Image clamp01(const Image& img);

double max_abs_diff(const Image& a, const Image& b);

}  // namespace rfsr
