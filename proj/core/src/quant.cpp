#include "sqnt/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sqnt {

std::int64_t grid_levels(int bits, Signedness sign) {
  if (bits < 2 || bits > 31) {
    throw std::invalid_argument("quantizer bits must be in [2, 31], got " + std::to_string(bits));
  }
  return sign == Signedness::Signed ? (std::int64_t{1} << (bits - 1)) - 1
                                    : (std::int64_t{1} << bits) - 1;
}

double quantize_pointwise(double t, int bits) {
  const double m = static_cast<double>((std::int64_t{1} << bits) - 1);
  return round_half_away(m * t) / m;
}

void QuantParams::validate() const {
  grid_levels(bits, sign);
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("quantizer scale alpha must be positive, got " +
                                std::to_string(alpha));
  }
}

namespace {

inline double clip_ratio(double x, double alpha, Signedness sign) {
  const double lo = sign == Signedness::Signed ? -1.0 : 0.0;
  return std::clamp(x / alpha, lo, 1.0);
}

}  // namespace

std::int64_t quantize_index(double x, const QuantParams& p) {
  const double m = static_cast<double>(p.levels());
  return static_cast<std::int64_t>(round_half_away(m * clip_ratio(x, p.alpha, p.sign)));
}

double dequantize_index(std::int64_t n, const QuantParams& p) {
  return p.alpha * (static_cast<double>(n) / static_cast<double>(p.levels()));
}

double fake_quant_value(double x, const QuantParams& p) {
  if (!p.enabled || std::isnan(x)) return x;
  return dequantize_index(quantize_index(x, p), p);
}

Tensor fake_quant(const Tensor& x, const QuantParams& p) {
  if (p.enabled) p.validate();
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = fake_quant_value(x[i], p);
  return out;
}

double alpha_gradient(double x, double x_b, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha_gradient: alpha must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= alpha) return 1.0;
  return (x_b - x) / alpha;
}

double alpha_gradient_signed(double x, double x_b, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha_gradient: alpha must be positive");
  if (x <= -alpha) return -1.0;
  if (x >= alpha) return 1.0;
  return (x_b - x) / alpha;
}

Var fake_quant(const Var& x, const Var& alpha, int bits, Signedness sign, bool enabled) {
  if (!enabled) return x;
  if (alpha.value().numel() != 1) throw ShapeError("fake_quant: alpha must be a scalar");
  const QuantParams p{bits, sign, alpha.value()[0], true};
  p.validate();

  const Tensor& xv = x.value();
  auto grid = std::make_shared<Grid>();
  grid->ints = Tensor(xv.shape());
  grid->step = p.step();
  Tensor value(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    // NaN stays NaN so the training loop sees it.
    if (std::isnan(xv[i])) {
      grid->ints[i] = value[i] = xv[i];
      continue;
    }
    const std::int64_t n = quantize_index(xv[i], p);
    grid->ints[i] = static_cast<double>(n);
    value[i] = dequantize_index(n, p);
  }

  Var out = make_node(
      "fake_quant", value, {x, alpha},
      [p, value](Node& self) {
        const Tensor& xin = self.inputs[0]->value;
        const double lo = p.sign == Signedness::Signed ? -p.alpha : 0.0;
        if (self.inputs[0]->requires_grad) {
          Tensor g = self.grad;
          for (std::int64_t i = 0; i < g.numel(); ++i)
            if (!(xin[i] > lo && xin[i] < p.alpha)) g[i] = 0.0;
          self.inputs[0]->accumulate(g);
        }
        if (self.inputs[1]->requires_grad) {
          double ga = 0.0;
          for (std::int64_t i = 0; i < xin.numel(); ++i) {
            const double d = p.sign == Signedness::Signed
                                 ? alpha_gradient_signed(xin[i], value[i], p.alpha)
                                 : alpha_gradient(xin[i], value[i], p.alpha);
            ga += self.grad[i] * d;
          }
          self.inputs[1]->accumulate(Tensor::scalar(ga));
        }
      },
      /*custom_gradient=*/true);
  out.node().grid = std::move(grid);
  return out;
}

Tensor normalize_weights(const Tensor& w) {
  return normalize_weights(Var::constant(w)).value();
}

Var normalize_weights(const Var& w) {
  const Tensor& wv = w.value();
  const auto n = static_cast<double>(wv.numel());
  double mu = 0.0;
  for (double v : wv.values()) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : wv.values()) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / n);
  const double s = sigma + kWeightNormEps;
  Tensor out(wv.shape());
  for (std::int64_t i = 0; i < wv.numel(); ++i) out[i] = (wv[i] - mu) / s;

  return make_node("normalize_weights", std::move(out), {w}, [mu, sigma, s, n](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    const Tensor& g = self.grad;
    double gmean = 0.0, gdot = 0.0;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      gmean += g[i];
      gdot += g[i] * (x[i] - mu);
    }
    gmean /= n;
    Tensor gx(x.shape());
    const double coef = sigma > 0.0 ? gdot / (n * sigma * s * s) : 0.0;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      gx[i] = (g[i] - gmean) / s - coef * (x[i] - mu);
    }
    self.inputs[0]->accumulate(gx);
  });
}

double mse(const Tensor& x, const Tensor& x_b) {
  require_same_shape(x, x_b, "mse");
  if (x.numel() == 0) return 0.0;
  double s = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - x_b[i];
    s += d * d;
  }
  return s / static_cast<double>(x.numel());
}

double percentile_abs(const Tensor& x, double q) {
  if (x.numel() == 0) return 0.0;
  std::vector<double> a(x.values().begin(), x.values().end());
  for (auto& v : a) {
    if (std::isnan(v)) return v;
    v = std::abs(v);
  }
  const auto n = a.size();
  // The guard keeps representation error in q from bumping an exact rank up.
  const double r = q * static_cast<double>(n) / 100.0;
  auto rank = static_cast<std::size_t>(std::ceil(r - 1e-9 * std::max(1.0, r)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(rank - 1), a.end());
  return a[rank - 1];
}

QuantizedTensor to_integer(const Tensor& x, const QuantParams& p) {
  p.validate();
  QuantizedTensor q;
  q.shape = x.shape();
  q.alpha = p.alpha;
  q.bits = p.bits;
  q.sign = p.sign;
  q.values.resize(static_cast<std::size_t>(x.numel()));
  const double tol = 1e-9 * p.alpha;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const std::int64_t n = std::isnan(x[i]) ? 0 : quantize_index(x[i], p);
    if (!(std::abs(dequantize_index(n, p) - x[i]) <= tol)) {
      throw OffGridError("value " + std::to_string(x[i]) + " at index " + std::to_string(i) +
                         " is not on the " + std::to_string(p.bits) + "-bit grid of scale " +
                         std::to_string(p.alpha));
    }
    q.values[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(n);
  }
  return q;
}

Tensor from_integer(const QuantizedTensor& q) {
  const auto p = q.params();
  Tensor out(q.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = dequantize_index(q.values[static_cast<std::size_t>(i)], p);
  }
  return out;
}

}  // namespace sqnt
