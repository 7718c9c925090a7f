#include <gtest/gtest.h>

#include <cmath>

#include "firead/errors.hpp"
#include "firead/nn.hpp"
#include "fuzz.hpp"

namespace firead {
namespace {

TEST(KernelOracle, Conv2dDenseGroupedDepthwiseDilated) {
  const auto s = oracle::fuzz_conv2d(11, 200, 1e-9);
  EXPECT_TRUE(s.ok()) << s.first_failure << " max error " << s.max_error;
}

TEST(KernelOracle, Pool2d) {
  const auto s = oracle::fuzz_pool2d(12, 150, 1e-12);
  EXPECT_TRUE(s.ok()) << s.first_failure << " max error " << s.max_error;
}

TEST(KernelOracle, Linear) {
  const auto s = oracle::fuzz_linear(13, 150, 1e-12);
  EXPECT_TRUE(s.ok()) << s.first_failure << " max error " << s.max_error;
}

TEST(KernelOracle, PartialConv) {
  const auto s = oracle::fuzz_partial_conv(14, 150, 1e-12);
  EXPECT_TRUE(s.ok()) << s.first_failure << " max error " << s.max_error;
}

TEST(Conv2dSpec, Validation) {
  EXPECT_THROW((Conv2dSpec{4, 6, 3, 1, 1, 1, 4, false}.validate()), ContractError);
  EXPECT_THROW((Conv2dSpec{4, 4, 0, 1, 0, 1, 1, false}.validate()), ContractError);
  EXPECT_THROW(Conv2dSpec::dense(3, 8, 3).output_shape({1, 4, 8, 8}), ShapeError);
  EXPECT_THROW((Conv2dSpec{3, 8, 5, 1, 0, 1, 1, false}.output_shape({1, 3, 2, 2})), ShapeError);
  EXPECT_EQ(Conv2dSpec::dense(3, 8, 3, 2).output_shape({1, 3, 9, 9}), (Shape{1, 8, 5, 5}));
  EXPECT_EQ(Conv2dSpec::depthwise(8).macs({2, 8, 4, 4}), 2 * 8 * 16 * 9);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = Tensor<double>::uniform({1, 2, 5, 5}, -1, 1, rng);
  auto w = Tensor<double>::zeros({2, 2, 1, 1});
  w.mutable_data()[0] = w.mutable_data()[3] = 1;
  auto y = conv2d(x, Conv2dSpec::pointwise(2, 2), w);
  EXPECT_EQ(oracle::max_abs_diff(oracle::values(x), y.data()), 0);
}

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
  auto x = Tensor<double>::from_data({2, 1, 1, 2}, {1, 2, 3, 6});
  auto bn = BatchNorm<double>::make(1);
  auto y = batch_norm(x, bn, Mode::train);
  const double mean = 3, var = (4 + 1 + 0 + 9) / 4.0;
  EXPECT_NEAR(y.data()[0], (1 - mean) / std::sqrt(var + 1e-5), 1e-12);
  EXPECT_NEAR(oracle::values(y)[0] + oracle::values(y)[1] + oracle::values(y)[2] + oracle::values(y)[3], 0, 1e-12);
  EXPECT_NEAR(bn.running_mean.data()[0], 0.1 * mean, 1e-12);
  EXPECT_NEAR(bn.running_var.data()[0], 0.9 + 0.1 * var * 4 / 3, 1e-12);
}

TEST(BatchNorm, InferUsesRunningStats) {
  auto bn = BatchNorm<double>::make(1);
  bn.running_mean.mutable_data()[0] = 2;
  bn.running_var.mutable_data()[0] = 4;
  bn.gamma.mutable_data()[0] = 3;
  bn.beta.mutable_data()[0] = 1;
  auto y = batch_norm(Tensor<double>::constant({1, 1, 1, 1}, 6), bn, Mode::infer);
  EXPECT_NEAR(y.item(), 3 * 4 / std::sqrt(4 + 1e-5) + 1, 1e-12);
  EXPECT_EQ(bn.running_mean.data()[0], 2);
}

TEST(Pool, ShapesAndErrors) {
  auto x = Tensor<double>::zeros({1, 1, 5, 5});
  EXPECT_EQ(pool2d(x, PoolKind::max, 2, 2).shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(pool2d(x, PoolKind::max, 5, 1, 2).shape(), (Shape{1, 1, 5, 5}));
  EXPECT_THROW(pool2d(x, PoolKind::avg, 7, 1, 0), ShapeError);
  EXPECT_THROW(pool2d(x, PoolKind::avg, 2, 0, 0), ContractError);
}

TEST(Pool, MaxGradientGoesToFirstMaximum) {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 4, 4, 0});
  x.set_requires_grad(true);
  backward(sum(pool2d(x, PoolKind::max, 2, 2)));
  EXPECT_EQ(x.grad()[1], 1);
  EXPECT_EQ(x.grad()[2], 0);
}

TEST(Shapes, UpsampleConcatGap) {
  Rng rng(2);
  auto x = Tensor<double>::uniform({2, 3, 2, 2}, -1, 1, rng);
  auto up = upsample_nearest(x, 2);
  EXPECT_EQ(up.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(up.at(1, 2, 3, 2), x.at(1, 2, 1, 1));
  auto cat = concat_channels<double>({x, x});
  EXPECT_EQ(cat.shape().c, 6);
  EXPECT_EQ(cat.at(1, 4, 0, 1), x.at(1, 1, 0, 1));
  EXPECT_THROW(concat_channels<double>({x, up}), ShapeError);
  auto g = global_avg_pool(x);
  EXPECT_NEAR(g.at(0, 1, 0, 0), (x.at(0, 1, 0, 0) + x.at(0, 1, 0, 1) + x.at(0, 1, 1, 0) + x.at(0, 1, 1, 1)) / 4,
              1e-15);
}

TEST(Dropout, InferIsIdentityTrainScales) {
  Rng rng(3);
  auto x = Tensor<double>::constant({1, 1, 32, 32}, 1);
  EXPECT_EQ(dropout(x, 0.5, Mode::infer, nullptr).id(), x.id());
  auto y = dropout(x, 0.5, Mode::train, &rng);
  int zeros = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0 || v == 2);
    zeros += v == 0;
  }
  EXPECT_GT(zeros, 400);
  EXPECT_LT(zeros, 624);
  EXPECT_THROW(dropout(x, 0.5, Mode::train, nullptr), ContractError);
}

TEST(PartialConv, PassthroughChannelsUntouched) {
  Rng rng(5);
  auto x = Tensor<double>::uniform({1, 8, 4, 4}, -1, 1, rng);
  auto w = Tensor<double>::uniform({2, 1, 3, 3}, -1, 1, rng);
  auto y = partial_conv(x, 4, w);
  for (std::int64_t c = 2; c < 8; ++c)
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_EQ(y.at(0, c, i, 3 - i), x.at(0, c, i, 3 - i));
  EXPECT_THROW(partial_conv(x, 3, w), ContractError);
}

}  // namespace
}  // namespace firead
