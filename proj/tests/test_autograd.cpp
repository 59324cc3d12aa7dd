#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "rfsr/autograd.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/resample.hpp"

using namespace rfsr;
using ad::Tensor;

namespace {

// Projects an op's output onto fixed random weights so any output shape
// reduces to a scalar, then compares the analytic gradient at every input
// coordinate with a central difference.
void check_gradient(const ad::Shape& in_shape, const std::function<Tensor(const Tensor&)>& op, std::uint64_t seed,
                    double lo = -1.0, double hi = 1.0, double tol = 1e-6) {
  Tensor x = Tensor::parameter(in_shape, oracle::random_values(ad::numel(in_shape), seed, lo, hi));
  const Tensor probe_out = [&] {
    ad::NoGradGuard ng;
    return op(x);
  }();
  const Tensor proj = Tensor::constant(probe_out.shape(), oracle::random_values(probe_out.numel(), seed + 1));
  auto loss = [&] { return ad::sum(ad::mul(op(x), proj)); };

  loss().backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto value = [&] {
    ad::NoGradGuard ng;
    return loss().item();
  };
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double fd = oracle::central_difference(value, x.mutable_values(), i);
    EXPECT_NEAR(analytic[i], fd, tol * std::max(1.0, std::abs(fd))) << "coordinate " << i;
  }
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  check_gradient({2, 3, 4}, [](const Tensor& x) { return ad::silu(x); }, 1);
  check_gradient({2, 3, 4}, [](const Tensor& x) { return ad::tanh(x); }, 2);
  check_gradient({2, 3, 4}, [](const Tensor& x) { return ad::square(x); }, 3);
  check_gradient({2, 3, 4}, [](const Tensor& x) { return ad::mul(x, ad::add_scalar(x, 0.3)); }, 4);
  check_gradient({2, 3, 4}, [](const Tensor& x) { return ad::sub(ad::scale(x, 2.0), x); }, 5);
}

TEST(Autograd, SmoothClampIsDifferentiableEverywhere) {
  check_gradient({3, 4, 4}, [](const Tensor& x) { return ad::smooth_clamp01(x, 0.05); }, 6, -0.5, 1.5);
}

TEST(Autograd, SmoothClampRange) {
  const auto x = Tensor::constant({5}, {-0.5, 0.0, 0.5, 1.0, 1.5});
  const auto y = ad::smooth_clamp01(x, 0.05).to_vector();
  for (double v : y) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(y[2], 0.5);
  // Far outside the range the exponential tail saturates to the bounds.
  const auto far = ad::smooth_clamp01(Tensor::constant({2}, {-50.0, 50.0}), 0.05).to_vector();
  EXPECT_GE(far[0], 0.0);
  EXPECT_LE(far[1], 1.0);
}

TEST(Autograd, AbsAndRelu) {
  // Inputs kept away from the kink.
  check_gradient({10}, [](const Tensor& x) { return ad::abs(ad::add_scalar(x, 0.0)); }, 7, 0.1, 1.0);
  check_gradient({10}, [](const Tensor& x) { return ad::relu(x); }, 8, 0.1, 1.0);
  check_gradient({10}, [](const Tensor& x) { return ad::abs(x); }, 9, -1.0, -0.1);
}

TEST(Autograd, Conv2dInputAndWeight) {
  const auto w = Tensor::constant({3, 2, 3, 3}, oracle::random_values(54, 10));
  check_gradient({2, 5, 6}, [&](const Tensor& x) { return ad::conv2d(x, w); }, 11);
  const auto in = Tensor::constant({2, 5, 6}, oracle::random_values(60, 12));
  check_gradient({3, 2, 3, 3}, [&](const Tensor& wt) { return ad::conv2d(in, wt); }, 13);
}

TEST(Autograd, SpatialOps) {
  check_gradient({3, 4, 6}, [](const Tensor& x) { return ad::haar_ll(x); }, 14);
  check_gradient({3, 4, 6}, [](const Tensor& x) { return ad::avg_pool2(x); }, 15);
  check_gradient({3, 4, 6}, [](const Tensor& x) { return ad::max_pool2(x); }, 16);
  check_gradient({3, 4, 6}, [](const Tensor& x) { return ad::space_to_depth(x, 2); }, 17);
  check_gradient({12, 2, 3}, [](const Tensor& x) { return ad::depth_to_space(x, 2); }, 18);
  check_gradient({3, 6, 8}, [](const Tensor& x) { return resize(x, 3, 5, Interpolation::kBicubic); }, 19);
  check_gradient({3, 3, 4}, [](const Tensor& x) { return resize(x, 7, 9, Interpolation::kBilinear); }, 20);
}

TEST(Autograd, ChannelOpsAndLinearAlgebra) {
  const auto bias = Tensor::constant({2}, {0.3, -0.2});
  check_gradient({2, 3, 3}, [&](const Tensor& x) { return ad::add_channel_bias(x, bias); }, 21);
  const auto feat = Tensor::constant({2, 3, 3}, oracle::random_values(18, 22));
  check_gradient({2}, [&](const Tensor& b) { return ad::add_channel_bias(feat, b); }, 23);
  check_gradient({4, 3, 5}, [](const Tensor& x) { return ad::gram(x); }, 24);
  const auto v = Tensor::constant({3}, {0.5, -1.0, 2.0});
  check_gradient({4, 3}, [&](const Tensor& m) { return ad::matvec(m, v); }, 25);
  check_gradient({4, 3}, [](const Tensor& t) { return ad::row(t, 2); }, 26);
  const auto other = Tensor::constant({1, 3, 3}, oracle::random_values(9, 27));
  check_gradient({2, 3, 3}, [&](const Tensor& x) { return ad::concat_channels(x, other); }, 28);
  const auto s = Tensor::constant({1}, {1.7});
  check_gradient({2, 3}, [&](const Tensor& x) { return ad::mul_scalar(x, s); }, 29);
  check_gradient({1}, [&](const Tensor& k) { return ad::mul_scalar(feat, k); }, 30);
  check_gradient({2, 3, 3}, [](const Tensor& x) { return ad::reshape(x, {3, 6}); }, 31);
  check_gradient({2, 3, 3}, [](const Tensor& x) { return ad::mean(x); }, 32);
}

TEST(Autograd, SharedInputAccumulates) {
  auto x = Tensor::parameter({1}, {3.0});
  ad::add(ad::mul(x, x), x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, NoGradBuildsNoGraph) {
  auto x = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y;
  {
    ad::NoGradGuard ng;
    EXPECT_FALSE(ad::grad_enabled());
    y = ad::sum(ad::square(x));
  }
  EXPECT_TRUE(ad::grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  y.backward();
  EXPECT_FALSE(x.has_grad());
}

TEST(Autograd, DetachStopsGradient) {
  auto x = Tensor::parameter({2}, {1.0, 2.0});
  ad::sum(ad::mul(x, x.detach())).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(Autograd, ShapeMismatchThrows) {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({3, 2});
  EXPECT_THROW(ad::add(a, b), DimensionError);
}
