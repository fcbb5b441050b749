#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sqnt/autograd.hpp"
#include "sqnt/tensor.hpp"

namespace sqnt {

/// Signed grids cover [-alpha, alpha] with b-1 magnitude bits; unsigned grids
/// cover [0, alpha] with b bits.
enum class Signedness { Signed, Unsigned };

/// Number of positive grid levels M: 2^(b-1)-1 signed, 2^b-1 unsigned.
std::int64_t grid_levels(int bits, Signedness sign);

/// Round half away from zero. Shared by the float and integer paths.
inline double round_half_away(double v) { return std::round(v); }

/// q_b(t) = round((2^b - 1) t) / (2^b - 1), for t already clipped to [-1,1] or [0,1].
double quantize_pointwise(double t, int bits);

struct QuantParams {
  int bits = 8;
  Signedness sign = Signedness::Signed;
  double alpha = 1.0;
  bool enabled = true;

  std::int64_t levels() const { return grid_levels(bits, sign); }
  /// alpha / M, the real value of one integer step.
  double step() const { return alpha / static_cast<double>(levels()); }
  /// Throws std::invalid_argument unless 2 <= bits <= 31 and alpha > 0.
  void validate() const;
};

/// round(M * clip(x / alpha)) as an integer index.
std::int64_t quantize_index(double x, const QuantParams& p);
/// alpha * (n / M): the value a grid index stands for.
double dequantize_index(std::int64_t n, const QuantParams& p);
/// alpha * q(clip(x / alpha)); the identity when p.enabled is false.
double fake_quant_value(double x, const QuantParams& p);
Tensor fake_quant(const Tensor& x, const QuantParams& p);

/// d x_b / d alpha for the unsigned activation quantizer:
///   0 if x <= 0,  1 if x >= alpha,  (x_b - x) / alpha otherwise.
/// Throws std::invalid_argument when alpha <= 0.
double alpha_gradient(double x, double x_b, double alpha);
/// Signed counterpart: -1 if x <= -alpha, 1 if x >= alpha, (x_b - x) / alpha otherwise.
double alpha_gradient_signed(double x, double x_b, double alpha);

/// Differentiable fake quantization with straight-through gradients.
///
/// Forward returns grid values and attaches the integer Grid. Backward passes
/// the incoming gradient to x inside the clip range (zero outside) and to
/// alpha through the casewise rule above. When `enabled` is false the input
/// is returned unchanged.
Var fake_quant(const Var& x, const Var& alpha, int bits, Signedness sign, bool enabled = true);

inline Var fake_quant_weights(const Var& w, const Var& alpha, int bits, bool enabled = true) {
  return fake_quant(w, alpha, bits, Signedness::Signed, enabled);
}
inline Var fake_quant_activations(const Var& x, const Var& alpha, int bits, bool enabled = true) {
  return fake_quant(x, alpha, bits, Signedness::Unsigned, enabled);
}

inline constexpr double kWeightNormEps = 1e-6;

/// (w - mean) / (std + 1e-6) over the whole tensor, population std.
Tensor normalize_weights(const Tensor& w);
Var normalize_weights(const Var& w);

/// Mean of squared elementwise differences.
double mse(const Tensor& x, const Tensor& x_b);

/// q-th percentile (0..100) of |x|, nearest rank. NaN if x holds a NaN.
double percentile_abs(const Tensor& x, double q);

/// Tensor stored as grid indices.
struct QuantizedTensor {
  Shape shape;
  std::vector<std::int32_t> values;
  double alpha = 1.0;
  int bits = 8;
  Signedness sign = Signedness::Signed;

  QuantParams params() const { return {bits, sign, alpha, true}; }
};

/// Raised when a tensor that should already lie on a quantization grid does not.
class OffGridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Converts grid values to indices. Rejects values farther than 1e-9 * alpha
/// from their grid point, which signals a scale or bit-width mismatch.
QuantizedTensor to_integer(const Tensor& x, const QuantParams& p);
Tensor from_integer(const QuantizedTensor& q);

}  // namespace sqnt
