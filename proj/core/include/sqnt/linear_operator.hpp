#pragma once

#include <functional>
#include <vector>

#include "sqnt/kernels.hpp"
#include "sqnt/tensor.hpp"

namespace sqnt {

/// Matrix-free linear map between tensors of fixed shapes.
struct LinearOperator {
  Shape in_shape;
  Shape out_shape;
  std::function<Tensor(const Tensor&)> apply;
  std::function<Tensor(const Tensor&)> apply_transpose;

  std::int64_t in_dim() const { return shape_numel(in_shape); }
  std::int64_t out_dim() const { return shape_numel(out_shape); }
};

/// Convolution with `kernel` on inputs of `in_shape` ([1,C,H,W]); groups are
/// inferred from the channel counts, padding is 'same'.
LinearOperator conv_operator(const Tensor& kernel, const Shape& in_shape);
LinearOperator avg_pool_operator(const Shape& in_shape);
/// Dense rows x cols matrix (row-major) acting on vectors.
LinearOperator dense_operator(std::int64_t rows, std::int64_t cols, std::vector<double> matrix);
/// outer ∘ inner.
LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner);

/// Materializes the operator as a row-major out_dim x in_dim matrix.
std::vector<double> to_dense(const LinearOperator& op);

}  // namespace sqnt
