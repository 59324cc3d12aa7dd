#pragma once

#include <vector>

#include "rfsr/autograd.hpp"
#include "rfsr/image.hpp"

namespace rfsr {

// One subband: 3 planes of (height x width), planar like Image but without
// the [0,1] range contract (detail bands are signed, LL has gain 2).
struct Subband {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  bool operator==(const Subband&) const = default;
};

// Single-level orthonormal 2D Haar decomposition. For a 2x2 block
//   a b
//   c d
// LL = (a+b+c+d)/2, LH = (a+b-c-d)/2, HL = (a-b+c-d)/2, HH = (a-b-c+d)/2.
struct SubbandDecomposition {
  Subband ll, lh, hl, hh;
};

// Throws DimensionError on odd dimensions; pad first (see pad_to_even).
SubbandDecomposition dwt_forward(const Image& image);

// Throws DimensionError when the four subbands differ in shape.
Image dwt_inverse(const SubbandDecomposition& subbands);

// Mean absolute difference between the LL subbands of gt and gen.
double low_freq_loss(const Image& gt, const Image& gen);

// Differentiable form over (3,H,W) tensors; gradient flows into gen only if
// gen requires it.
ad::Tensor low_freq_loss(const ad::Tensor& gt, const ad::Tensor& gen);

// Conversions between Image and (3,H,W) tensors.
ad::Tensor to_tensor(const Image& image);
Image to_image(const ad::Tensor& t);

}  // namespace rfsr
