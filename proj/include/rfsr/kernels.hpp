#pragma once

// Data-parallel inner loops. Every kernel exists twice with the same
// signature: `serial` is the reference implementation kept for testing,
// `parallel` is the OpenMP version the library calls. Both produce bitwise
// identical results: reductions are split only across independent outputs,
// never inside a single sum.

#include <cstddef>
#include <span>

namespace rfsr::kernels {

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;  // odd, "same" zero padding, stride 1
};

#define RFSR_DECLARE_KERNELS                                                                                       \
  /* out[co,y,x] = sum_ci,ky,kx w[co,ci,ky,kx] * in[ci,y+ky-r,x+kx-r] */                                           \
  void conv2d_forward(std::span<const double> in, std::span<const double> weight, const ConvShape& s,              \
                      std::span<double> out);                                                                      \
  /* grad_in += conv_transpose(grad_out, weight) */                                                                \
  void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> weight, const ConvShape& s, \
                             std::span<double> grad_in);                                                           \
  /* grad_w += correlate(grad_out, in) */                                                                          \
  void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> in, const ConvShape& s,    \
                              std::span<double> grad_weight);                                                      \
  /* Orthonormal 2x2 Haar analysis per channel; outputs are channels x (h/2) x (w/2). */                           \
  void haar_forward(std::span<const double> in, int channels, int height, int width, std::span<double> ll,        \
                    std::span<double> lh, std::span<double> hl, std::span<double> hh);                             \
  void haar_inverse(std::span<const double> ll, std::span<const double> lh, std::span<const double> hl,           \
                    std::span<const double> hh, int channels, int height, int width, std::span<double> out);       \
  /* Separable filter with a symmetric odd-length kernel, "valid" region only. */                                  \
  void filter_valid(std::span<const double> in, int height, int width, std::span<const double> taps,              \
                    std::span<double> out);                                                                        \
  /* Mean of the SSIM map from local first and second moments. */                                                  \
  double ssim_map_mean(std::span<const double> mu_a, std::span<const double> mu_b, std::span<const double> e_aa,  \
                       std::span<const double> e_bb, std::span<const double> e_ab, double c1, double c2);          \
  /* gram[i,j] = sum_p f[i,p] f[j,p] * scale, f is channels x positions. */                                        \
  void gram(std::span<const double> features, int channels, std::size_t positions, double scale,                   \
            std::span<double> out);                                                                                \
  /* grad_f[i,p] += sum_j (g[i,j] + g[j,i]) f[j,p] * scale */                                                      \
  void gram_backward(std::span<const double> grad_gram, std::span<const double> features, int channels,           \
                     std::size_t positions, double scale, std::span<double> grad_features);

namespace serial {
RFSR_DECLARE_KERNELS
}
namespace parallel {
RFSR_DECLARE_KERNELS
}

#undef RFSR_DECLARE_KERNELS

// Number of OpenMP threads the parallel kernels will use (1 when built without OpenMP).
int parallel_threads();

}  // namespace rfsr::kernels
