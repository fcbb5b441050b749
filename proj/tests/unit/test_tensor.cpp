#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "common/test_support.hpp"
#include "sqnt/autograd.hpp"
#include "sqnt/kernels.hpp"
#include "sqnt/ops.hpp"
#include "sqnt/tensor.hpp"

using namespace sqnt;
using sqnt::testing::Gen;
using sqnt::testing::as_vector;
using sqnt::testing::naive_conv_matrix;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.rank(), 4);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
  EXPECT_EQ(shape_str(t.shape()), "[2,3,4,5]");
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({2, 3}).reshaped({5}), ShapeError);
  EXPECT_THROW(dot(Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Tensor, Helpers) {
  const Tensor a = Tensor::from({3}, {3, -4, 0});
  EXPECT_DOUBLE_EQ(norm2(a), 5.0);
  EXPECT_DOUBLE_EQ(max_abs(a), 4.0);
  EXPECT_DOUBLE_EQ(dot(a, a), 25.0);
  EXPECT_EQ(axpy(2.0, a, a), Tensor::from({3}, {9, -12, 0}));
  EXPECT_TRUE(a.all_finite());
  EXPECT_FALSE(Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()}).all_finite());
  EXPECT_EQ(Tensor::from({1}, {0.1}).rounded_to_f32()[0], static_cast<double>(0.1f));
}

// Random grouped / strided convolutions against an entry-by-entry matrix.
TEST(Kernels, ConvMatchesDenseOracle) {
  Gen g(1);
  for (int t = 0; t < 30; ++t) {
    const int groups = static_cast<int>(g.integer(1, 3));
    const auto cg = g.integer(1, 2), cog = g.integer(1, 3), k = 2 * g.integer(0, 2) + 1;
    const auto h = g.integer(3, 7), w = g.integer(3, 7);
    const Tensor x = g.tensor({1, groups * cg, h, w});
    const Tensor kk = g.tensor({groups * cog, cg, k, k});
    const Tensor y = kernels::conv2d(x, kk, {1, kernels::Padding::same, groups});
    const Eigen::VectorXd want = naive_conv_matrix(kk, groups * cg, h, w) * as_vector(x);
    EXPECT_LT((as_vector(y) - want).norm(), 1e-12 * (1.0 + want.norm()));
  }
}

TEST(Kernels, ConvOutputShapes) {
  using kernels::Padding;
  EXPECT_EQ(kernels::conv2d_output_shape({2, 4, 9, 8}, {6, 2, 3, 3}, {1, Padding::same, 2}), (Shape{2, 6, 9, 8}));
  EXPECT_EQ(kernels::conv2d_output_shape({1, 1, 9, 8}, {1, 1, 3, 3}, {2, Padding::valid, 1}), (Shape{1, 1, 4, 3}));
  EXPECT_THROW(kernels::conv2d_output_shape({1, 3, 5, 5}, {2, 2, 3, 3}, {}), ShapeError);
  EXPECT_THROW(kernels::conv2d_output_shape({1, 3, 5, 5}, {2, 3, 3}, {}), ShapeError);
}

TEST(Kernels, Pooling) {
  Tensor x({1, 1, 3, 5});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
  const Tensor p = kernels::avg_pool2(x);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(p[0], (0 + 1 + 5 + 6) / 4.0);
  EXPECT_DOUBLE_EQ(p[1], (2 + 3 + 7 + 8) / 4.0);
  const Tensor s = kernels::sum_pool2(x);
  EXPECT_DOUBLE_EQ(s[0], 12.0);
  EXPECT_DOUBLE_EQ(kernels::global_avg_pool(x)[0], 7.0);
}

TEST(Kernels, TvSmoothFixture) {
  Tensor row({1, 1, 1, 3});
  row[1] = 1.0;
  const Tensor out = kernels::tv_smooth(row, 0.1, 1e-13);
  EXPECT_NEAR(out[0], 0.1, 1e-12);
  EXPECT_NEAR(out[1], 0.8, 1e-12);
  EXPECT_NEAR(out[2], 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(kernels::tv_norm(row), 2.0);
  const Tensor sign = kernels::tv_smooth_sign(row, 0.1);
  EXPECT_NEAR(sign[1], 0.8, 1e-15);
}

TEST(Kernels, TvSmoothPreservesConstants) {
  const Tensor c({2, 3, 4, 4}, 0.7);
  EXPECT_EQ(kernels::tv_smooth(c, 0.2, 1e-3), c);
  EXPECT_DOUBLE_EQ(kernels::tv_norm(c), 0.0);
}

TEST(Autograd, SharedNodeAccumulates) {
  Var x = Var::leaf(Tensor::from({2}, {1.5, -2.0}), true);
  backward(sum(mul(x, x)));  // d/dx sum(x^2) = 2x
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
}

TEST(Autograd, ConstantsBuildNoGraph) {
  const Var a = Var::constant(Tensor::from({2}, {1, 2}));
  const Var y = relu(add(a, a));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.value(), Tensor::from({2}, {2, 4}));
}

TEST(Autograd, BackwardNeedsScalar) {
  Var x = Var::leaf(Tensor({3}), true);
  EXPECT_THROW(backward(x), std::invalid_argument);
}
