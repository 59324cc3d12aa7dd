#include "rfsr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <fmt/core.h>

#include "rfsr/errors.hpp"
#include "rfsr/kernels.hpp"

namespace rfsr::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
}

void check_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank)
    throw DimensionError(fmt::format("{}: expected rank {}, got {}", op, rank, shape_str(a.shape())));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

// Builds result nodes and wires up history when it is needed.
struct OpBuilder {
  std::shared_ptr<Node> node = std::make_shared<Node>();
  bool track = false;

  OpBuilder(Shape shape, std::initializer_list<const Tensor*> inputs) {
    node->shape = std::move(shape);
    node->value.assign(numel(node->shape), 0.0);
    if (!g_grad_enabled) return;
    for (const Tensor* t : inputs) track = track || t->requires_grad();
    if (!track) return;
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_);
  }

  std::vector<double>& out() { return node->value; }

  Tensor finish(std::function<void(Node&)> backward) {
    if (track) node->backward = std::move(backward);
    return Tensor(node);
  }

  static Node& of(const Tensor& t) { return *t.node_; }
};

namespace {

// Gradient buffer of an input if it participates in differentiation, else null.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != ad::numel(shape))
    throw DimensionError(fmt::format("constant: {} values for shape {}", values.size(), shape_str(shape)));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(n);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(ad::numel(shape), value);
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) return {};
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto v = values();
  return {v.begin(), v.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->leaf; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(n);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  if (t.node_) t.node_->requires_grad = node_->requires_grad && node_->leaf;
  return t;
}

void Tensor::backward() const {
  if (!node_) throw std::logic_error("backward on undefined tensor");
  if (node_->value.size() != 1) throw DimensionError("backward requires a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Release the graph; leaves keep their accumulated gradients.
  for (Node* n : order) {
    if (!n->leaf) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  OpBuilder op(a.shape(), {&a, &b});
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] + bv[i];
  return op.finish([](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = grad_of(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  OpBuilder op(a.shape(), {&a, &b});
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] - bv[i];
  return op.finish([](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  OpBuilder op(a.shape(), {&a, &b});
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] * bv[i];
  return op.finish([](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  OpBuilder op(a.shape(), {&a});
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] * s;
  return op.finish([s](Node& self) {
    auto& g = *grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  OpBuilder op(a.shape(), {&a});
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] + s;
  return op.finish([](Node& self) {
    auto& g = *grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// Pointwise op with derivative computed from the input value.
template <typename F, typename DF>
Tensor pointwise(const Tensor& a, F f, DF df) {
  OpBuilder op(a.shape(), {&a});
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = f(av[i]);
  return op.finish([df](Node& self) {
    const auto& x = self.inputs[0]->value;
    auto& g = *grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i]);
  });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor abs(const Tensor& a) {
  return pointwise(
      a, [](double x) { return std::abs(x); }, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return pointwise(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return pointwise(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return pointwise(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor silu(const Tensor& a) {
  return pointwise(
      a, [](double x) { return x * sigmoid(x); },
      [](double x) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor smooth_clamp01(const Tensor& a, double margin) {
  if (!(margin > 0.0 && margin < 0.5)) throw std::invalid_argument("smooth_clamp01: margin must be in (0, 0.5)");
  const double lo = margin, hi = 1.0 - margin;
  auto f = [=](double x) {
    if (x < lo) return margin * std::exp((x - lo) / margin);
    if (x > hi) return 1.0 - margin * std::exp((hi - x) / margin);
    return x;
  };
  auto df = [=](double x) {
    if (x < lo) return std::exp((x - lo) / margin);
    if (x > hi) return std::exp((hi - x) / margin);
    return 1.0;
  };
  return pointwise(a, f, df);
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand must have one element");
  OpBuilder op(a.shape(), {&a, &s});
  const double sv = s.values()[0];
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) op.out()[i] = av[i] * sv;
  return op.finish([](Node& self) {
    const auto& x = self.inputs[0]->value;
    const double k = self.inputs[1]->value[0];
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * k;
    if (auto* g = grad_of(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += self.grad[i] * x[i];
      (*g)[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape

Tensor sum(const Tensor& a) {
  OpBuilder op({1}, {&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  op.out()[0] = s;
  return op.finish([](Node& self) {
    auto& g = *grad_of(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw DimensionError(fmt::format("reshape {} -> {}", shape_str(a.shape()), shape_str(shape)));
  OpBuilder op(std::move(shape), {&a});
  std::copy(a.values().begin(), a.values().end(), op.out().begin());
  return op.finish([](Node& self) {
    auto& g = *grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  check_rank(x, 3, "add_channel_bias");
  if (bias.numel() != static_cast<std::size_t>(x.dim(0))) throw DimensionError("add_channel_bias: bias size");
  OpBuilder op(x.shape(), {&x, &bias});
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto xv = x.values(), bv = bias.values();
  for (int c = 0; c < x.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) op.out()[c * plane + p] = xv[c * plane + p] + bv[c];
  return op.finish([plane](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t c = 0; c < g->size(); ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += self.grad[c * plane + p];
        (*g)[c] += acc;
      }
  });
}

Tensor affine_channels(const Tensor& x, std::span<const double> scale_v, std::span<const double> shift) {
  check_rank(x, 3, "affine_channels");
  const auto channels = static_cast<std::size_t>(x.dim(0));
  if (scale_v.size() != channels || shift.size() != channels) throw DimensionError("affine_channels: vector size");
  OpBuilder op(x.shape(), {&x});
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto xv = x.values();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) op.out()[c * plane + p] = xv[c * plane + p] * scale_v[c] + shift[c];
  std::vector<double> s(scale_v.begin(), scale_v.end());
  return op.finish([s, plane](Node& self) {
    auto& g = *grad_of(self, 0);
    for (std::size_t c = 0; c < s.size(); ++c)
      for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] += self.grad[c * plane + p] * s[c];
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank(a, 3, "concat_channels");
  check_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) throw DimensionError("concat_channels: spatial mismatch");
  OpBuilder op({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, {&a, &b});
  std::copy(a.values().begin(), a.values().end(), op.out().begin());
  std::copy(b.values().begin(), b.values().end(), op.out().begin() + static_cast<std::ptrdiff_t>(a.numel()));
  const std::size_t na = a.numel();
  return op.finish([na](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[na + i];
  });
}

// ---------------------------------------------------------------------------
// Spatial

Tensor conv2d(const Tensor& x, const Tensor& weight) {
  check_rank(x, 3, "conv2d");
  check_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != x.dim(0))
    throw DimensionError(fmt::format("conv2d: input {} vs weight {}", shape_str(x.shape()), shape_str(weight.shape())));
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) throw DimensionError("conv2d: kernel must be odd square");
  const kernels::ConvShape cs{x.dim(0), weight.dim(0), x.dim(1), x.dim(2), weight.dim(2)};
  OpBuilder op({cs.out_channels, cs.height, cs.width}, {&x, &weight});
  kernels::parallel::conv2d_forward(x.values(), weight.values(), cs, op.out());
  return op.finish([cs](Node& self) {
    if (auto* g = grad_of(self, 0)) kernels::parallel::conv2d_backward_input(self.grad, self.inputs[1]->value, cs, *g);
    if (auto* g = grad_of(self, 1)) kernels::parallel::conv2d_backward_weight(self.grad, self.inputs[0]->value, cs, *g);
  });
}

namespace {

// Index of element (c, y, x) of a (C,H,W) tensor inside its (C*f*f, H/f, W/f) rearrangement.
std::size_t s2d_index(int c, int y, int x, int f, int oh, int ow) {
  const int oc = (c * f + y % f) * f + x % f;
  return (static_cast<std::size_t>(oc) * oh + y / f) * ow + x / f;
}

}  // namespace

Tensor space_to_depth(const Tensor& x, int factor) {
  check_rank(x, 3, "space_to_depth");
  if (factor < 1 || x.dim(1) % factor || x.dim(2) % factor) throw DimensionError("space_to_depth: size not divisible");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / factor, ow = w / factor;
  OpBuilder op({c * factor * factor, oh, ow}, {&x});
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        op.out()[s2d_index(ch, y, xx, factor, oh, ow)] = xv[(static_cast<std::size_t>(ch) * h + y) * w + xx];
  return op.finish([=](Node& self) {
    auto& g = *grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          g[(static_cast<std::size_t>(ch) * h + y) * w + xx] += self.grad[s2d_index(ch, y, xx, factor, oh, ow)];
  });
}

Tensor depth_to_space(const Tensor& x, int factor) {
  check_rank(x, 3, "depth_to_space");
  if (factor < 1 || x.dim(0) % (factor * factor)) throw DimensionError("depth_to_space: channels not divisible");
  const int c = x.dim(0) / (factor * factor), oh = x.dim(1), ow = x.dim(2), h = oh * factor, w = ow * factor;
  OpBuilder op({c, h, w}, {&x});
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        op.out()[(static_cast<std::size_t>(ch) * h + y) * w + xx] = xv[s2d_index(ch, y, xx, factor, oh, ow)];
  return op.finish([=](Node& self) {
    auto& g = *grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          g[s2d_index(ch, y, xx, factor, oh, ow)] += self.grad[(static_cast<std::size_t>(ch) * h + y) * w + xx];
  });
}

Tensor haar_ll(const Tensor& x) {
  check_rank(x, 3, "haar_ll");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError(fmt::format("haar_ll: odd dimensions {}x{}", h, w));
  const int oh = h / 2, ow = w / 2;
  OpBuilder op({c, oh, ow}, {&x});
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t t = (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
        op.out()[(static_cast<std::size_t>(ch) * oh + i) * ow + j] = 0.5 * (xv[t] + xv[t + 1] + xv[t + w] + xv[t + w + 1]);
      }
  return op.finish([=](Node& self) {
    auto& g = *grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const double gv = 0.5 * self.grad[(static_cast<std::size_t>(ch) * oh + i) * ow + j];
          const std::size_t t = (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
          g[t] += gv;
          g[t + 1] += gv;
          g[t + w] += gv;
          g[t + w + 1] += gv;
        }
  });
}

Tensor avg_pool2(const Tensor& x) {
  check_rank(x, 3, "avg_pool2");
  if (x.dim(1) % 2 || x.dim(2) % 2) throw DimensionError("avg_pool2: odd dimensions");
  return scale(haar_ll(x), 0.5);
}

Tensor max_pool2(const Tensor& x) {
  check_rank(x, 3, "max_pool2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError("max_pool2: odd dimensions");
  const int oh = h / 2, ow = w / 2;
  OpBuilder op({c, oh, ow}, {&x});
  auto xv = x.values();
  auto argmax = std::make_shared<std::vector<std::size_t>>(op.out().size());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t t = (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
        std::size_t best = t;
        for (std::size_t cand : {t + 1, t + w, t + w + 1})
          if (xv[cand] > xv[best]) best = cand;
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + i) * ow + j;
        op.out()[o] = xv[best];
        (*argmax)[o] = best;
      }
  return op.finish([argmax](Node& self) {
    auto& g = *grad_of(self, 0);
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
}

Tensor resample(const Tensor& x, int out_h, int out_w, std::span<const double> rows, std::span<const double> cols) {
  check_rank(x, 3, "resample");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (rows.size() != static_cast<std::size_t>(out_h) * h || cols.size() != static_cast<std::size_t>(out_w) * w)
    throw DimensionError("resample: weight matrix size");
  OpBuilder op({c, out_h, out_w}, {&x});
  std::vector<double> r(rows.begin(), rows.end()), q(cols.begin(), cols.end());
  auto xv = x.values();
  std::vector<double> tmp(static_cast<std::size_t>(h) * out_w);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (int xx = 0; xx < w; ++xx) acc += q[static_cast<std::size_t>(ox) * w + xx] * src[static_cast<std::size_t>(y) * w + xx];
        tmp[static_cast<std::size_t>(y) * out_w + ox] = acc;
      }
    double* dst = op.out().data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (int y = 0; y < h; ++y) acc += r[static_cast<std::size_t>(oy) * h + y] * tmp[static_cast<std::size_t>(y) * out_w + ox];
        dst[static_cast<std::size_t>(oy) * out_w + ox] = acc;
      }
  }
  return op.finish([=](Node& self) {
    auto& g = *grad_of(self, 0);
    std::vector<double> gt(static_cast<std::size_t>(h) * out_w);
    for (int ch = 0; ch < c; ++ch) {
      const double* go = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
      std::fill(gt.begin(), gt.end(), 0.0);
      for (int oy = 0; oy < out_h; ++oy)
        for (int y = 0; y < h; ++y) {
          const double rv = r[static_cast<std::size_t>(oy) * h + y];
          if (rv == 0.0) continue;
          for (int ox = 0; ox < out_w; ++ox) gt[static_cast<std::size_t>(y) * out_w + ox] += rv * go[static_cast<std::size_t>(oy) * out_w + ox];
        }
      double* gi = g.data() + static_cast<std::size_t>(ch) * h * w;
      for (int y = 0; y < h; ++y)
        for (int ox = 0; ox < out_w; ++ox) {
          const double gv = gt[static_cast<std::size_t>(y) * out_w + ox];
          for (int xx = 0; xx < w; ++xx) gi[static_cast<std::size_t>(y) * w + xx] += q[static_cast<std::size_t>(ox) * w + xx] * gv;
        }
    }
  });
}

Tensor gram(const Tensor& x) {
  check_rank(x, 3, "gram");
  const int c = x.dim(0);
  const std::size_t positions = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (c == 0 || positions == 0) throw DimensionError("gram: empty feature map");
  const double s = 1.0 / (static_cast<double>(c) * static_cast<double>(positions));
  OpBuilder op({c, c}, {&x});
  kernels::parallel::gram(x.values(), c, positions, s, op.out());
  return op.finish([=](Node& self) {
    kernels::parallel::gram_backward(self.grad, self.inputs[0]->value, c, positions, s, *grad_of(self, 0));
  });
}

Tensor row(const Tensor& table, int r) {
  check_rank(table, 2, "row");
  if (r < 0 || r >= table.dim(0)) throw RangeError(fmt::format("row {} outside table of {} rows", r, table.dim(0)));
  const int cols = table.dim(1);
  OpBuilder op({cols}, {&table});
  auto tv = table.values();
  std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(r) * cols, cols, op.out().begin());
  return op.finish([=](Node& self) {
    auto& g = *grad_of(self, 0);
    for (int j = 0; j < cols; ++j) g[static_cast<std::size_t>(r) * cols + j] += self.grad[j];
  });
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  check_rank(m, 2, "matvec");
  const int rows = m.dim(0), cols = m.dim(1);
  if (v.numel() != static_cast<std::size_t>(cols)) throw DimensionError("matvec: vector size");
  OpBuilder op({rows}, {&m, &v});
  auto mv = m.values(), vv = v.values();
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) acc += mv[static_cast<std::size_t>(i) * cols + j] * vv[j];
    op.out()[i] = acc;
  }
  return op.finish([=](Node& self) {
    const auto& mval = self.inputs[0]->value;
    const auto& vval = self.inputs[1]->value;
    if (auto* g = grad_of(self, 0))
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) (*g)[static_cast<std::size_t>(i) * cols + j] += self.grad[i] * vval[j];
    if (auto* g = grad_of(self, 1))
      for (int j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int i = 0; i < rows; ++i) acc += mval[static_cast<std::size_t>(i) * cols + j] * self.grad[i];
        (*g)[j] += acc;
      }
  });
}

}  // namespace rfsr::ad
