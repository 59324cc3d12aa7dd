#pragma once

#include <string_view>
#include <vector>

#include "rfsr/autograd.hpp"
#include "rfsr/image.hpp"

namespace rfsr {

enum class Interpolation { kArea, kBilinear, kBicubic };

Interpolation parse_interpolation(std::string_view name);
std::string_view interpolation_name(Interpolation interp);

// Interpolation kernels (cubic uses a = -0.5).
double cubic_kernel(double x);
double linear_kernel(double x);
double box_kernel(double x);

// (out x in) row-major weights of a 1-D resize with the given kernel:
// pixel-center alignment, kernel widened by 1/scale when shrinking
// (antialiasing), symmetric boundary handling, rows normalised to sum 1.
std::vector<double> resize_weights(int in_size, int out_size, Interpolation interp);

Image resize(const Image& image, int out_height, int out_width, Interpolation interp);

// Differentiable resize of a (C,H,W) tensor.
ad::Tensor resize(const ad::Tensor& x, int out_height, int out_width, Interpolation interp);

}  // namespace rfsr
