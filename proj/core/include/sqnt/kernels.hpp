#pragma once

// Numeric kernels on plain tensors. No autodiff bookkeeping happens here;
// ops.hpp wraps these with backward rules.

#include <cstdint>

#include "sqnt/tensor.hpp"

namespace sqnt::kernels {

enum class Padding { valid, same };

struct ConvSpec {
  int stride = 1;
  Padding padding = Padding::same;
  int groups = 1;
};

/// Output shape of a cross-correlation of x[N,C,H,W] with k[Co,C/groups,kh,kw].
Shape conv2d_output_shape(const Shape& x, const Shape& k, const ConvSpec& spec);

Tensor conv2d(const Tensor& x, const Tensor& k, const ConvSpec& spec);

/// Exact adjoint of conv2d with respect to x. `in_h`/`in_w` select the input
/// extent, which is ambiguous for strided convolutions.
Tensor conv2d_transpose(const Tensor& y, const Tensor& k, const ConvSpec& spec,
                        std::int64_t in_h, std::int64_t in_w);

/// d<conv2d(x,k), gy>/dk.
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gy, const Shape& kshape,
                          const ConvSpec& spec);

/// 2x2 average pooling with stride 2. Odd trailing rows/columns are dropped.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_transpose(const Tensor& gy, const Shape& in_shape);
/// Sum over each 2x2 window (the integer-friendly half of avg_pool2).
Tensor sum_pool2(const Tensor& x);

/// Mean over H and W: [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_transpose(const Tensor& gy, const Shape& in_shape);

// Anisotropic TV smoothing, applied per channel with Neumann boundaries:
//   S(x) = x - gamma2 * (Gx^T W_x Gx + Gy^T W_y Gy) x,  W = diag(1 / (|G x| + eps)).

/// (Dx + Dy) x with weights computed from x.
Tensor tv_diffusion(const Tensor& x, double eps);
Tensor tv_smooth(const Tensor& x, double gamma2, double eps);
/// Inference form using only sign(G x) in place of W G x.
Tensor tv_smooth_sign(const Tensor& x, double gamma2);
/// J^T g for S at x (J is symmetric).
Tensor tv_smooth_vjp(const Tensor& x, const Tensor& g, double gamma2, double eps);

/// Discrete l1 total variation: sum |Gx x| + |Gy x| over every map.
double tv_norm(const Tensor& x);
/// Subgradient of tv_norm (sign 0 at ties).
Tensor tv_norm_grad(const Tensor& x);

}  // namespace sqnt::kernels
