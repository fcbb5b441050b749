#pragma once

// Stability measurements: paired quantized / full-precision traces,
// per-layer divergence, operator norms, step-size bounds and Jacobian spectra.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sqnt/linear_operator.hpp"
#include "sqnt/network.hpp"

namespace sqnt {

/// Runs `input` through two networks with identical block lists. Throws
/// std::invalid_argument when the fingerprints differ.
std::pair<ActivationTrace, ActivationTrace> paired_trace(Network& a, const ForwardContext& ctx_a,
                                                         Network& b, const ForwardContext& ctx_b,
                                                         const Tensor& input);
/// Same network, weights quantized at `bits_w` in both runs; activations
/// quantized at `bits_a` in the first run only.
std::pair<ActivationTrace, ActivationTrace> paired_trace(Network& net, const Tensor& input,
                                                         int bits_w, int bits_a);

struct LayerDivergence {
  std::size_t index = 0;
  BlockKind kind = BlockKind::sym_res;
  double mse = 0.0;  // per entry
};

struct DivergenceReport {
  std::vector<LayerDivergence> layers;
  std::map<std::string, std::string> meta;

  double final_mse() const { return layers.empty() ? 0.0 : layers.back().mse; }
};

/// Per-entry MSE between corresponding trace entries. Throws
/// std::invalid_argument on length or shape mismatch.
DivergenceReport divergence(const ActivationTrace& a, const ActivationTrace& b);

struct PowerIterationOptions {
  double tolerance = 1e-9;  // relative change of the Rayleigh quotient
  int max_iterations = 10000;
  std::uint64_t seed = 0;
};

/// Largest singular value by power iteration on A^T A; 0 for the zero operator.
double operator_norm(const LinearOperator& a, const PowerIterationOptions& opt = {});
double operator_norm(const Tensor& kernel, const Shape& in_shape,
                     const PowerIterationOptions& opt = {});

struct StepBoundRow {
  std::size_t index = 0;
  BlockKind kind = BlockKind::sym_res;
  bool applicable = false;  // false for parameter-free blocks
  bool symmetric = false;
  double h = 0.0;
  double norm_sq = 0.0;  // ||K||^2, or the product of factor norms for plain steps
  double bound = 0.0;    // 2 / (L norm_sq)
  bool ok = true;        // h < bound
};

/// 2 / (L ||K||^2); +inf for a zero operator.
double step_bound(double norm_sq, double lipschitz = 1.0);
std::vector<StepBoundRow> check_step_bound(const Network& net, const Shape& input_shape,
                                           const ForwardContext& ctx, double lipschitz = 1.0,
                                           const PowerIterationOptions& opt = {});

/// Rescales every symmetric step violating its bound so that h equals
/// `fraction` of the bound. Returns the number of rescaled blocks.
int project_step_bounds(Network& net, const Shape& input_shape, const ForwardContext& ctx,
                        double fraction = 0.9, double lipschitz = 1.0,
                        const PowerIterationOptions& opt = {});

struct Spectrum {
  double min = 0.0;
  double max = 0.0;
  double radius() const;
};

/// Eigenvalues of a symmetric row-major n x n matrix (cyclic Jacobi), ascending.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::int64_t n);

/// Extremal eigenvalues of I - h K^T Omega K. Omega is diagonal over the
/// output of K with entries in [0,1] (std::invalid_argument otherwise).
/// Dense Jacobi up to `dense_limit` unknowns, Lanczos beyond.
Spectrum jacobian_spectrum(const LinearOperator& k, double h, const Tensor& omega,
                           std::int64_t dense_limit = 256, std::uint64_t seed = 0);

/// ||eta_j|| after each trunk block for inputs x and x + eta0 fed to the
/// trunk (eta0 lives on the trunk input). Element 0 is ||eta0||.
std::vector<double> perturbation_growth(Network& net, const Tensor& input, const Tensor& eta0,
                                        const ForwardContext& ctx = {});

}  // namespace sqnt
