#pragma once

// Differentiable operations on Var. Each op computes its value with the
// kernels in kernels.hpp and registers the matching backward rule.

#include <cstdint>
#include <span>
#include <vector>

#include "sqnt/autograd.hpp"
#include "sqnt/kernels.hpp"

namespace sqnt {

using kernels::ConvSpec;
using kernels::Padding;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// a * s for a single-element Var s. A grid on `a` is carried over with its
/// step multiplied by s.
Var scale_by(const Var& a, const Var& s);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);

/// max(x, 0); the subgradient at 0 is 0.
Var relu(const Var& x);

/// Cross-correlation. When both x and k carry a Grid the value is computed on
/// the integers and rescaled by x.step * k.step.
Var conv2d(const Var& x, const Var& k, const ConvSpec& spec = {});
/// Adjoint of conv2d in x; grid-aware like conv2d.
Var conv2d_transpose(const Var& y, const Var& k, const ConvSpec& spec, std::int64_t in_h,
                     std::int64_t in_w);

/// 2x2/stride-2 average pooling. On grid input: sum of integers times step/4.
Var avg_pool2(const Var& x);
Var global_avg_pool(const Var& x);

/// x[N,F] * w[C,F]^T + b[C]
Var linear(const Var& x, const Var& w, const Var& b);

Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count);
Var reshape(const Var& x, Shape shape);
/// [1,C,n,1] node feature map -> [n,C] rows.
Var nodes_to_rows(const Var& x);
/// [n,C] rows -> [1,C,n,1].
Var rows_to_nodes(const Var& x);

/// Mean softmax cross-entropy over rows of logits[N,C]. With a mask only the
/// selected rows contribute. Throws std::invalid_argument for labels out of
/// range or an empty mask.
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const std::uint8_t> mask = {});

/// S(x) = x - gamma^2 (Dx + Dy) x with weights recomputed from x.
Var tv_smooth(const Var& x, const Var& gamma, double eps);
/// l1 anisotropic total variation of every map in x.
Var tv_norm(const Var& x);

}  // namespace sqnt
