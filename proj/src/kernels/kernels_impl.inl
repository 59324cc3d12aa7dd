// Shared kernel bodies. Included once per backend with RFSR_KERNEL_NS set to
// `serial` or `parallel`; RFSR_PFOR(cond) expands to an OpenMP worksharing
// pragma only in the parallel backend.

#include <algorithm>
#include <vector>

namespace rfsr::kernels::RFSR_KERNEL_NS {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1u << 14;

}  // namespace

void conv2d_forward(std::span<const double> in, std::span<const double> weight, const ConvShape& s,
                    std::span<double> out) {
  const int r = s.kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const bool big = plane * s.in_channels * s.out_channels * s.kernel * s.kernel >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int co = 0; co < s.out_channels; ++co) {
    double* o = out.data() + co * plane;
    std::fill(o, o + plane, 0.0);
    for (int ci = 0; ci < s.in_channels; ++ci) {
      const double* src = in.data() + ci * plane;
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double wv = weight[((static_cast<std::size_t>(co) * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
          const int dy = ky - r;
          const int dx = kx - r;
          const int y0 = std::max(0, -dy), y1 = std::min(s.height, s.height - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(s.width, s.width - dx);
          for (int y = y0; y < y1; ++y) {
            const double* srow = src + static_cast<std::size_t>(y + dy) * s.width + dx;
            double* orow = o + static_cast<std::size_t>(y) * s.width;
            for (int x = x0; x < x1; ++x) orow[x] += wv * srow[x];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> weight, const ConvShape& s,
                           std::span<double> grad_in) {
  const int r = s.kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const bool big = plane * s.in_channels * s.out_channels * s.kernel * s.kernel >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int ci = 0; ci < s.in_channels; ++ci) {
    double* gi = grad_in.data() + ci * plane;
    for (int co = 0; co < s.out_channels; ++co) {
      const double* go = grad_out.data() + co * plane;
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double wv = weight[((static_cast<std::size_t>(co) * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
          const int dy = ky - r;
          const int dx = kx - r;
          // out[y,x] used in[y+dy, x+dx]
          const int y0 = std::max(0, -dy), y1 = std::min(s.height, s.height - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(s.width, s.width - dx);
          for (int y = y0; y < y1; ++y) {
            const double* grow = go + static_cast<std::size_t>(y) * s.width;
            double* irow = gi + static_cast<std::size_t>(y + dy) * s.width + dx;
            for (int x = x0; x < x1; ++x) irow[x] += wv * grow[x];
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> in, const ConvShape& s,
                            std::span<double> grad_weight) {
  const int r = s.kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const bool big = plane * s.in_channels * s.out_channels * s.kernel * s.kernel >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int co = 0; co < s.out_channels; ++co) {
    const double* go = grad_out.data() + co * plane;
    for (int ci = 0; ci < s.in_channels; ++ci) {
      const double* src = in.data() + ci * plane;
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int dy = ky - r;
          const int dx = kx - r;
          const int y0 = std::max(0, -dy), y1 = std::min(s.height, s.height - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(s.width, s.width - dx);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = go + static_cast<std::size_t>(y) * s.width;
            const double* srow = src + static_cast<std::size_t>(y + dy) * s.width + dx;
            for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
          }
          grad_weight[((static_cast<std::size_t>(co) * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] += acc;
        }
      }
    }
  }
}

void haar_forward(std::span<const double> in, int channels, int height, int width, std::span<double> ll,
                  std::span<double> lh, std::span<double> hl, std::span<double> hh) {
  const int hh2 = height / 2, hw2 = width / 2;
  const int rows = channels * hh2;
  const bool big = static_cast<std::size_t>(channels) * height * width >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int row = 0; row < rows; ++row) {
    const int c = row / hh2;
    const int i = row % hh2;
    const double* top = in.data() + (static_cast<std::size_t>(c) * height + 2 * i) * width;
    const double* bot = top + width;
    const std::size_t o = static_cast<std::size_t>(row) * hw2;
    for (int j = 0; j < hw2; ++j) {
      const double a = top[2 * j], b = top[2 * j + 1], cc = bot[2 * j], d = bot[2 * j + 1];
      ll[o + j] = 0.5 * (a + b + cc + d);
      lh[o + j] = 0.5 * (a + b - cc - d);
      hl[o + j] = 0.5 * (a - b + cc - d);
      hh[o + j] = 0.5 * (a - b - cc + d);
    }
  }
}

void haar_inverse(std::span<const double> ll, std::span<const double> lh, std::span<const double> hl,
                  std::span<const double> hh, int channels, int height, int width, std::span<double> out) {
  const int hh2 = height / 2, hw2 = width / 2;
  const int rows = channels * hh2;
  const bool big = static_cast<std::size_t>(channels) * height * width >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int row = 0; row < rows; ++row) {
    const int c = row / hh2;
    const int i = row % hh2;
    double* top = out.data() + (static_cast<std::size_t>(c) * height + 2 * i) * width;
    double* bot = top + width;
    const std::size_t o = static_cast<std::size_t>(row) * hw2;
    for (int j = 0; j < hw2; ++j) {
      const double s = ll[o + j], v = lh[o + j], h = hl[o + j], d = hh[o + j];
      top[2 * j] = 0.5 * (s + v + h + d);
      top[2 * j + 1] = 0.5 * (s + v - h - d);
      bot[2 * j] = 0.5 * (s - v + h - d);
      bot[2 * j + 1] = 0.5 * (s - v - h + d);
    }
  }
}

void filter_valid(std::span<const double> in, int height, int width, std::span<const double> taps,
                  std::span<double> out) {
  const int k = static_cast<int>(taps.size());
  const int oh = height - k + 1, ow = width - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(height) * ow);
  const bool big = static_cast<std::size_t>(height) * width * k >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int y = 0; y < height; ++y) {
    const double* src = in.data() + static_cast<std::size_t>(y) * width;
    double* dst = tmp.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * src[x + t];
      dst[x] = acc;
    }
  }
  RFSR_PFOR(big)
  for (int y = 0; y < oh; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
      dst[x] = acc;
    }
  }
}

double ssim_map_mean(std::span<const double> mu_a, std::span<const double> mu_b, std::span<const double> e_aa,
                     std::span<const double> e_bb, std::span<const double> e_ab, double c1, double c2) {
  constexpr std::size_t kBlock = 256;
  const std::size_t n = mu_a.size();
  if (n == 0) return 0.0;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(blocks, 0.0);
  const bool big = n >= kMinParallelWork / 8;
  RFSR_PFOR(big)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t end = std::min(n, (b + 1) * kBlock);
    double acc = 0.0;
    for (std::size_t i = b * kBlock; i < end; ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(n);
}

void gram(std::span<const double> features, int channels, std::size_t positions, double scale,
          std::span<double> out) {
  const bool big = static_cast<std::size_t>(channels) * channels * positions >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int i = 0; i < channels; ++i) {
    const double* fi = features.data() + i * positions;
    for (int j = i; j < channels; ++j) {
      const double* fj = features.data() + j * positions;
      double acc = 0.0;
      for (std::size_t p = 0; p < positions; ++p) acc += fi[p] * fj[p];
      out[static_cast<std::size_t>(i) * channels + j] = acc * scale;
    }
  }
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < i; ++j)
      out[static_cast<std::size_t>(i) * channels + j] = out[static_cast<std::size_t>(j) * channels + i];
}

void gram_backward(std::span<const double> grad_gram, std::span<const double> features, int channels,
                   std::size_t positions, double scale, std::span<double> grad_features) {
  const bool big = static_cast<std::size_t>(channels) * channels * positions >= kMinParallelWork;
  RFSR_PFOR(big)
  for (int i = 0; i < channels; ++i) {
    double* gi = grad_features.data() + i * positions;
    for (int j = 0; j < channels; ++j) {
      const double coeff =
          (grad_gram[static_cast<std::size_t>(i) * channels + j] + grad_gram[static_cast<std::size_t>(j) * channels + i]) *
          scale;
      if (coeff == 0.0) continue;
      const double* fj = features.data() + j * positions;
      for (std::size_t p = 0; p < positions; ++p) gi[p] += coeff * fj[p];
    }
  }
}

}  // namespace rfsr::kernels::RFSR_KERNEL_NS
