#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Tensors are shared handles to graph nodes. Operations record a backward
// closure only when grad mode is on and at least one input requires a
// gradient, so code run under NoGradGuard builds no graph at all.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rfsr::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int dim(int i) const { return shape()[static_cast<std::size_t>(i)]; }
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access, meant for optimizers and loaders touching leaves.
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  // Gradient buffer; empty until backward has reached this tensor.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;
  // Deep copy of the values into a new leaf with the same requires_grad flag.
  Tensor clone() const;

  // Seeds d(this)/d(this) = 1 and propagates; this must be a scalar.
  void backward() const;

  const detail::Node* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpBuilder;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);  // subgradient 0 at 0
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);

// Identity on [margin, 1-margin], exponential approach to 0 and 1 outside,
// continuously differentiable, range (0,1).
Tensor smooth_clamp01(const Tensor& a, double margin);

// Scalar * tensor where the scalar is itself a 1-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

// Channel-wise ops on (C,H,W) tensors with a (C) vector.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor affine_channels(const Tensor& x, std::span<const double> scale, std::span<const double> shift);

Tensor concat_channels(const Tensor& a, const Tensor& b);

// (C,H,W) conv with (Cout,Cin,k,k) weights, stride 1, zero "same" padding.
Tensor conv2d(const Tensor& x, const Tensor& weight);

// (C,H,W) <-> (C*f*f, H/f, W/f)
Tensor space_to_depth(const Tensor& x, int factor);
Tensor depth_to_space(const Tensor& x, int factor);

// LL subband of the orthonormal single-level Haar transform, (C,H,W) -> (C,H/2,W/2).
Tensor haar_ll(const Tensor& x);

Tensor avg_pool2(const Tensor& x);
Tensor max_pool2(const Tensor& x);

// Separable linear resampling: out[c] = rows * x[c] * cols^T,
// rows is (out_h x in_h), cols is (out_w x in_w), both row-major.
Tensor resample(const Tensor& x, int out_h, int out_w, std::span<const double> rows, std::span<const double> cols);

// Gram of a (C,H,W) map: F F^T / (C*H*W), output (C,C).
Tensor gram(const Tensor& x);

// Row r of a (R,C) table as a (C) vector.
Tensor row(const Tensor& table, int r);

// (M,N) x (N) -> (M)
Tensor matvec(const Tensor& m, const Tensor& v);

}  // namespace rfsr::ad
