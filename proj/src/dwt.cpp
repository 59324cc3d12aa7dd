#include "rfsr/dwt.hpp"

#include <fmt/core.h>

#include "rfsr/errors.hpp"
#include "rfsr/kernels.hpp"

namespace rfsr {

SubbandDecomposition dwt_forward(const Image& image) {
  const int h = image.height(), w = image.width();
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError(fmt::format("dwt_forward: {}x{} image has odd dimensions; reflect-pad first", h, w));
  SubbandDecomposition out;
  const std::size_t n = static_cast<std::size_t>(Image::kChannels) * (h / 2) * (w / 2);
  for (Subband* s : {&out.ll, &out.lh, &out.hl, &out.hh}) {
    s->height = h / 2;
    s->width = w / 2;
    s->data.assign(n, 0.0);
  }
  kernels::parallel::haar_forward(image.data(), Image::kChannels, h, w, out.ll.data, out.lh.data, out.hl.data,
                                  out.hh.data);
  return out;
}

Image dwt_inverse(const SubbandDecomposition& s) {
  const auto& ref = s.ll;
  for (const Subband* b : {&s.lh, &s.hl, &s.hh})
    if (b->height != ref.height || b->width != ref.width || b->data.size() != ref.data.size())
      throw DimensionError("dwt_inverse: subband shapes differ");
  if (ref.data.size() != static_cast<std::size_t>(Image::kChannels) * ref.height * ref.width)
    throw DimensionError("dwt_inverse: subband buffer does not match its shape");
  Image out(ref.height * 2, ref.width * 2);
  kernels::parallel::haar_inverse(s.ll.data, s.lh.data, s.hl.data, s.hh.data, Image::kChannels, out.height(),
                                  out.width(), out.data());
  return out;
}

double low_freq_loss(const Image& gt, const Image& gen) {
  require_same_shape(gt, gen, "low_freq_loss");
  ad::NoGradGuard no_grad;
  return low_freq_loss(to_tensor(gt), to_tensor(gen)).item();
}

ad::Tensor low_freq_loss(const ad::Tensor& gt, const ad::Tensor& gen) {
  if (gt.shape() != gen.shape())
    throw DimensionError(
        fmt::format("low_freq_loss: shape mismatch {} vs {}", ad::shape_str(gt.shape()), ad::shape_str(gen.shape())));
  return ad::mean(ad::abs(ad::sub(ad::haar_ll(gt.detach()), ad::haar_ll(gen))));
}

ad::Tensor to_tensor(const Image& image) {
  return ad::Tensor::constant({Image::kChannels, image.height(), image.width()}, image.vector());
}

Image to_image(const ad::Tensor& t) {
  if (t.shape().size() != 3 || t.dim(0) != Image::kChannels)
    throw DimensionError(fmt::format("to_image: expected (3,H,W), got {}", ad::shape_str(t.shape())));
  return Image(t.dim(1), t.dim(2), t.to_vector());
}

}  // namespace rfsr
