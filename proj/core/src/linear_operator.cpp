#include "sqnt/linear_operator.hpp"

#include <memory>

namespace sqnt {

LinearOperator conv_operator(const Tensor& kernel, const Shape& in_shape) {
  if (in_shape.size() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv_operator: expected rank-4 kernel and input shape");
  }
  kernels::ConvSpec spec;
  spec.groups = static_cast<int>(in_shape[1] / kernel.dim(1));
  LinearOperator op;
  op.in_shape = in_shape;
  op.out_shape = kernels::conv2d_output_shape(in_shape, kernel.shape(), spec);
  op.apply = [kernel, spec](const Tensor& x) { return kernels::conv2d(x, kernel, spec); };
  const auto h = in_shape[2], w = in_shape[3];
  op.apply_transpose = [kernel, spec, h, w](const Tensor& y) {
    return kernels::conv2d_transpose(y, kernel, spec, h, w);
  };
  return op;
}

LinearOperator avg_pool_operator(const Shape& in_shape) {
  LinearOperator op;
  op.in_shape = in_shape;
  op.out_shape = {in_shape.at(0), in_shape.at(1), in_shape.at(2) / 2, in_shape.at(3) / 2};
  op.apply = [](const Tensor& x) { return kernels::avg_pool2(x); };
  op.apply_transpose = [in_shape](const Tensor& y) {
    return kernels::avg_pool2_transpose(y, in_shape);
  };
  return op;
}

LinearOperator dense_operator(std::int64_t rows, std::int64_t cols, std::vector<double> matrix) {
  if (static_cast<std::int64_t>(matrix.size()) != rows * cols) {
    throw ShapeError("dense_operator: matrix size mismatch");
  }
  auto m = std::make_shared<const std::vector<double>>(std::move(matrix));
  LinearOperator op;
  op.in_shape = {cols};
  op.out_shape = {rows};
  op.apply = [m, rows, cols](const Tensor& x) {
    Tensor y(Shape{rows});
    for (std::int64_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) s += (*m)[i * cols + j] * x[j];
      y[i] = s;
    }
    return y;
  };
  op.apply_transpose = [m, rows, cols](const Tensor& y) {
    Tensor x(Shape{cols});
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) x[j] += (*m)[i * cols + j] * y[i];
    return x;
  };
  return op;
}

LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner) {
  if (shape_numel(outer.in_shape) != shape_numel(inner.out_shape)) {
    throw ShapeError("compose: " + shape_str(inner.out_shape) + " does not feed " +
                     shape_str(outer.in_shape));
  }
  LinearOperator op;
  op.in_shape = inner.in_shape;
  op.out_shape = outer.out_shape;
  auto mid_in = outer.in_shape;
  auto mid_out = inner.out_shape;
  op.apply = [outer, inner, mid_in](const Tensor& x) {
    return outer.apply(inner.apply(x).reshaped(mid_in));
  };
  op.apply_transpose = [outer, inner, mid_out](const Tensor& y) {
    return inner.apply_transpose(outer.apply_transpose(y).reshaped(mid_out));
  };
  return op;
}

std::vector<double> to_dense(const LinearOperator& op) {
  const auto m = op.out_dim(), n = op.in_dim();
  std::vector<double> a(static_cast<std::size_t>(m * n));
  Tensor e(op.in_shape);
  for (std::int64_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Tensor col = op.apply(e);
    for (std::int64_t i = 0; i < m; ++i) a[static_cast<std::size_t>(i * n + j)] = col[i];
    e[j] = 0.0;
  }
  return a;
}

}  // namespace sqnt
