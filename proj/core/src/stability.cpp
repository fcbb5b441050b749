#include "sqnt/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "sqnt/quant.hpp"

namespace sqnt {

std::pair<ActivationTrace, ActivationTrace> paired_trace(Network& a, const ForwardContext& ctx_a,
                                                         Network& b, const ForwardContext& ctx_b,
                                                         const Tensor& input) {
  if (a.fingerprint() != b.fingerprint() || a.size() != b.size()) {
    throw std::invalid_argument("paired_trace: networks have different block lists");
  }
  std::pair<ActivationTrace, ActivationTrace> out;
  a.forward(Var::constant(input), ctx_a, &out.first);
  b.forward(Var::constant(input), ctx_b, &out.second);
  return out;
}

std::pair<ActivationTrace, ActivationTrace> paired_trace(Network& net, const Tensor& input,
                                                         int bits_w, int bits_a) {
  ForwardContext q;
  q.bits_w = bits_w;
  q.bits_a = bits_a;
  ForwardContext fp = q;
  fp.quantize_activations = false;
  return paired_trace(net, q, net, fp, input);
}

DivergenceReport divergence(const ActivationTrace& a, const ActivationTrace& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("divergence: traces have " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " entries");
  }
  DivergenceReport r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].index != b[i].index || a[i].kind != b[i].kind) {
      throw std::invalid_argument("divergence: trace entry " + std::to_string(i) +
                                  " refers to different blocks");
    }
    r.layers.push_back({a[i].index, a[i].kind, mse(a[i].activation, b[i].activation)});
  }
  return r;
}

namespace {

Tensor random_unit(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor v(shape);
  for (auto& x : v.values()) x = dist(rng);
  const double n = norm2(v);
  for (auto& x : v.values()) x /= n;
  return v;
}

}  // namespace

double operator_norm(const LinearOperator& a, const PowerIterationOptions& opt) {
  Tensor v = random_unit(a.in_shape, opt.seed);
  double lambda = 0.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    Tensor w = a.apply_transpose(a.apply(v)).reshaped(a.in_shape);
    const double rq = dot(v, w);  // Rayleigh quotient of A^T A at unit v
    const double n = norm2(w);
    if (n == 0.0) return 0.0;
    for (auto& x : w.values()) x /= n;
    v = std::move(w);
    const bool converged = std::abs(rq - lambda) <= opt.tolerance * std::max(std::abs(rq), 1e-300);
    lambda = rq;
    if (converged && it > 0) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

double operator_norm(const Tensor& kernel, const Shape& in_shape, const PowerIterationOptions& opt) {
  return operator_norm(conv_operator(kernel, in_shape), opt);
}

double step_bound(double norm_sq, double lipschitz) {
  const double d = lipschitz * norm_sq;
  return d > 0.0 ? 2.0 / d : std::numeric_limits<double>::infinity();
}

std::vector<StepBoundRow> check_step_bound(const Network& net, const Shape& input_shape,
                                           const ForwardContext& ctx, double lipschitz,
                                           const PowerIterationOptions& opt) {
  std::vector<StepBoundRow> rows;
  for (const auto& bi : net.step_infos(input_shape, ctx)) {
    StepBoundRow row;
    row.index = bi.index;
    row.kind = bi.kind;
    if (bi.info) {
      row.applicable = true;
      row.symmetric = bi.info->symmetric;
      row.h = bi.info->h;
      if (bi.info->symmetric) {
        const double n = operator_norm(bi.info->factors.front(), opt);
        row.norm_sq = n * n;
      } else {
        double p = 1.0;
        for (const auto& f : bi.info->factors) p *= operator_norm(f, opt);
        row.norm_sq = p;
      }
      row.bound = step_bound(row.norm_sq, lipschitz);
      row.ok = row.h < row.bound;
    }
    rows.push_back(row);
  }
  return rows;
}

int project_step_bounds(Network& net, const Shape& input_shape, const ForwardContext& ctx,
                        double fraction, double lipschitz, const PowerIterationOptions& opt) {
  int changed = 0;
  for (const auto& row : check_step_bound(net, input_shape, ctx, lipschitz, opt)) {
    if (!row.applicable || row.ok || !row.symmetric) continue;
    // Want h = fraction * 2 / (L n'^2).
    const double target_sq = fraction * 2.0 / (lipschitz * row.h);
    net.block(row.index).rescale_step(std::sqrt(target_sq / row.norm_sq));
    ++changed;
  }
  return changed;
}

double Spectrum::radius() const { return std::max(std::abs(min), std::abs(max)); }

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::int64_t n) {
  if (static_cast<std::int64_t>(a.size()) != n * n) {
    throw ShapeError("symmetric_eigenvalues: matrix size mismatch");
  }
  auto at = [&](std::int64_t i, std::int64_t j) -> double& {
    return a[static_cast<std::size_t>(i * n + j)];
  };
  double total = 0.0;
  for (double v : a) total += v * v;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

namespace {

Spectrum lanczos_extremes(const std::function<Tensor(const Tensor&)>& m, const Shape& shape,
                          std::int64_t n, std::uint64_t seed) {
  const std::int64_t steps = std::min<std::int64_t>(n, 120);
  std::vector<Tensor> basis;
  std::vector<double> alpha, beta;
  Tensor v = random_unit(shape, seed);
  for (std::int64_t j = 0; j < steps; ++j) {
    basis.push_back(v);
    Tensor w = m(v);
    const double a = dot(w, v);
    alpha.push_back(a);
    // Full reorthogonalization keeps the small tridiagonal problem faithful.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double c = dot(w, b);
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] -= c * b[i];
      }
    }
    const double nb = norm2(w);
    if (nb < 1e-12 || j + 1 == steps) break;
    beta.push_back(nb);
    for (auto& x : w.values()) x /= nb;
    v = std::move(w);
  }
  const auto k = static_cast<std::int64_t>(alpha.size());
  std::vector<double> t(static_cast<std::size_t>(k * k), 0.0);
  for (std::int64_t i = 0; i < k; ++i) {
    t[static_cast<std::size_t>(i * k + i)] = alpha[static_cast<std::size_t>(i)];
    if (i + 1 < k) {
      t[static_cast<std::size_t>(i * k + i + 1)] = beta[static_cast<std::size_t>(i)];
      t[static_cast<std::size_t>((i + 1) * k + i)] = beta[static_cast<std::size_t>(i)];
    }
  }
  const auto ev = symmetric_eigenvalues(std::move(t), k);
  return {ev.front(), ev.back()};
}

}  // namespace

Spectrum jacobian_spectrum(const LinearOperator& k, double h, const Tensor& omega,
                           std::int64_t dense_limit, std::uint64_t seed) {
  if (omega.numel() != k.out_dim()) {
    throw ShapeError("jacobian_spectrum: omega must match the operator output");
  }
  for (double w : omega.values()) {
    if (!(w >= 0.0 && w <= 1.0)) {
      throw std::invalid_argument("jacobian_spectrum: omega entries must lie in [0, 1]");
    }
  }
  auto m = [&](const Tensor& x) {
    Tensor y = k.apply(x.reshaped(k.in_shape));
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= omega[i];
    Tensor z = k.apply_transpose(y).reshaped(x.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = x[i] - h * z[i];
    return z;
  };
  const auto n = k.in_dim();
  if (n <= dense_limit) {
    std::vector<double> a(static_cast<std::size_t>(n * n));
    Tensor e(k.in_shape);
    for (std::int64_t j = 0; j < n; ++j) {
      e[j] = 1.0;
      const Tensor col = m(e);
      for (std::int64_t i = 0; i < n; ++i) a[static_cast<std::size_t>(i * n + j)] = col[i];
      e[j] = 0.0;
    }
    // Symmetrize against rounding before the eigen solve.
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) {
        const double s = 0.5 * (a[static_cast<std::size_t>(i * n + j)] +
                                a[static_cast<std::size_t>(j * n + i)]);
        a[static_cast<std::size_t>(i * n + j)] = a[static_cast<std::size_t>(j * n + i)] = s;
      }
    const auto ev = symmetric_eigenvalues(std::move(a), n);
    return {ev.front(), ev.back()};
  }
  return lanczos_extremes(m, k.in_shape, n, seed);
}

std::vector<double> perturbation_growth(Network& net, const Tensor& input, const Tensor& eta0,
                                        const ForwardContext& ctx) {
  ForwardContext c = ctx;
  c.quantize_activations = false;
  c.bits_a = 32;
  c.sites = nullptr;
  const Var opened = net.block(0).forward(Var::constant(input), c);
  require_same_shape(opened.value(), eta0, "perturbation_growth");
  ActivationTrace ta, tb;
  net.trunk_from(Var::constant(opened.value()), c, &ta);
  net.trunk_from(Var::constant(axpy(1.0, eta0, opened.value())), c, &tb);
  std::vector<double> out{norm2(eta0)};
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].activation.shape() != tb[i].activation.shape()) break;
    out.push_back(norm2(axpy(-1.0, ta[i].activation, tb[i].activation)));
  }
  return out;
}

}  // namespace sqnt
