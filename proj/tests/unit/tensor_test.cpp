#include <gtest/gtest.h>

#include <cmath>

#include "firead/errors.hpp"
#include "firead/grad_check.hpp"
#include "firead/nn.hpp"
#include "firead/tensor.hpp"

namespace firead {
namespace {

TEST(Shape, NumelAndErrors) {
  EXPECT_EQ((Shape{2, 3, 4, 5}.numel()), 120);
  EXPECT_THROW((Shape{1, -1, 2, 2}.numel()), ShapeError);
  EXPECT_THROW((Shape{1 << 30, 1 << 30, 1 << 30, 1 << 30}.numel()), SizeError);
}

TEST(Tensor, FromDataChecksSize) {
  EXPECT_THROW(Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3}), ShapeError);
  auto t = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at(0, 0, 1, 0), 3);
  EXPECT_THROW(t.item(), ContractError);
}

TEST(Tensor, CopiesShareStorage) {
  auto a = Tensor<double>::zeros({1, 1, 1, 2});
  auto b = a;
  b.mutable_data()[1] = 5;
  EXPECT_EQ(a.data()[1], 5);
  auto c = a.detach();
  c.mutable_data()[1] = 7;
  EXPECT_EQ(a.data()[1], 5);
}

TEST(Binary, Broadcasting) {
  auto a = Tensor<double>::from_data({2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto per_channel = Tensor<double>::from_data({2, 2, 1, 1}, {10, 20, 30, 40});
  auto y = add(a, per_channel);
  EXPECT_EQ(y.at(0, 1, 0, 1), 24);
  EXPECT_EQ(y.at(1, 0, 0, 0), 35);
  auto s = mul(a, Tensor<double>::scalar(2));
  EXPECT_EQ(s.at(1, 1, 0, 1), 16);
  EXPECT_THROW(add(a, Tensor<double>::zeros({1, 2, 1, 1})), ShapeError);
  EXPECT_THROW(add(a, Tensor<double>::zeros({2, 2, 2, 1})), ShapeError);
}

TEST(Reduce, AxesKeepExtentOne) {
  auto x = Tensor<double>::from_data({1, 2, 1, 3}, {1, 2, 3, 4, 5, 6});
  auto r = reduce(x, ReduceKind::sum, axis::hw);
  EXPECT_EQ(r.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_EQ(r.at(0, 1, 0, 0), 15);
  EXPECT_DOUBLE_EQ(mean(x).item(), 3.5);
}

TEST(Backward, AccumulatesAcrossUsesAndCalls) {
  auto x = Tensor<double>::from_data({1, 1, 1, 2}, {2, 3});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 4);
  EXPECT_EQ(x.grad()[1], 6);
  backward(sum(add(x, x)));
  EXPECT_EQ(x.grad()[0], 6);
  x.zero_grad();
  EXPECT_EQ(x.grad()[1], 0);
}

TEST(Backward, NoGradGuardDropsGraph) {
  auto x = Tensor<double>::scalar(1.5);
  x.set_requires_grad(true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_mode_enabled());
    y = sigmoid(x);
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, RequiresScalarLoss) {
  auto x = Tensor<double>::zeros({1, 1, 1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(relu(x)), ContractError);
}

TEST(Unary, ValuesAtKnownPoints) {
  auto x = Tensor<double>::from_data({1, 1, 1, 3}, {-1, 0, 2});
  EXPECT_EQ(relu(x).data()[0], 0);
  EXPECT_DOUBLE_EQ(sigmoid(x).data()[1], 0.5);
  EXPECT_DOUBLE_EQ(silu(x).data()[2], 2 / (1 + std::exp(-2.0)));
  EXPECT_DOUBLE_EQ(softplus(x).data()[0], std::log1p(std::exp(-1.0)));
}

TEST(Slice, ChannelRangeAndErrors) {
  auto x = Tensor<double>::from_data({1, 3, 1, 1}, {1, 2, 3});
  auto s = slice_channels(x, 1, 3);
  EXPECT_EQ(s.shape().c, 2);
  EXPECT_EQ(s.data()[0], 2);
  EXPECT_THROW(slice_channels(x, 2, 4), ShapeError);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
}

TEST(GradCheck, PassesCorrectAndFlagsWrongGradient) {
  auto w = Tensor<double>::from_data({1, 1, 1, 3}, {0.3, -0.2, 0.7});
  w.set_requires_grad(true);
  EXPECT_LT(grad_check([&] { return sum(mul(sigmoid(w), w)); }, {w}).max_relative_error, 1e-6);

  Rng rng(4);
  auto x = Tensor<double>::uniform({1, 2, 4, 4}, -1, 1, rng);
  auto k = Tensor<double>::uniform({2, 2, 3, 3}, -1, 1, rng);
  k.set_requires_grad(true);
  const auto spec = Conv2dSpec::dense(2, 2, 3);
  auto f = [&] { return random_projection(conv2d(x, spec, k), 9); };
  EXPECT_LT(grad_check(f, {k}).max_relative_error, 1e-6);
  detail::set_backward_fault(true);
  const double err = grad_check(f, {k}).max_relative_error;
  detail::set_backward_fault(false);
  EXPECT_GT(err, 1e-3);
}

}  // namespace
}  // namespace firead
