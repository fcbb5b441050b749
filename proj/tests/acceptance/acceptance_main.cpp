// Acceptance checks AC-1 .. AC-11. Prints one PASS/FAIL line per check and
// exits non-zero when any check fails. Run a subset by naming them:
//   sqnt_acceptance AC-4 AC-10

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../common/test_support.hpp"
#include "sqnt/checkpoint.hpp"
#include "sqnt/config.hpp"
#include "sqnt/experiment.hpp"
#include "sqnt/graph.hpp"
#include "sqnt/int_inference.hpp"
#include "sqnt/kernels.hpp"
#include "sqnt/layers.hpp"
#include "sqnt/quant.hpp"
#include "sqnt/stability.hpp"
#include "sqnt/training.hpp"

#ifndef SQNT_CONFIG_DIR
#error "SQNT_CONFIG_DIR must point at the configs/ directory"
#endif

namespace {

using namespace sqnt;
using sqnt::testing::Gen;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig desk_config(const std::string& file) {
  return ExperimentConfig::from_file(std::string(SQNT_CONFIG_DIR) + "/" + file);
}

// ---------------------------------------------------------------------------

Outcome ac1() {
  Gen g(11);
  std::int64_t grid_fail = 0, bound_fail = 0;
  double worst_ratio = 0.0;
  for (int b = 2; b <= 8; ++b) {
    for (Signedness sign : {Signedness::Signed, Signedness::Unsigned}) {
      const double alpha = 0.75;
      const QuantParams p{b, sign, alpha, true};
      const std::int64_t m = sign == Signedness::Signed ? (1 << (b - 1)) - 1 : (1 << b) - 1;
      const std::int64_t lo = sign == Signedness::Signed ? -m : 0;
      Tensor grid({m - lo + 1});
      for (std::int64_t n = lo; n <= m; ++n) grid[n - lo] = alpha * (static_cast<double>(n) / static_cast<double>(m));
      const QuantizedTensor q = to_integer(grid, p);
      const Tensor back = from_integer(q);
      for (std::int64_t i = 0; i < grid.numel(); ++i) {
        if (q.values[static_cast<std::size_t>(i)] != lo + i) ++grid_fail;
        const double a = back[i], b2 = grid[i];
        if (std::memcmp(&a, &b2, sizeof(double)) != 0) ++grid_fail;
      }
      // Pointwise grid resolution: b magnitude bits unsigned, b-1 signed.
      const double bound = alpha / (2.0 * static_cast<double>(m));
      const double x_lo = sign == Signedness::Signed ? -alpha : 0.0;
      for (int s = 0; s < 100000; ++s) {
        const double x = g.uniform(x_lo, alpha);
        const double err = std::abs(x - fake_quant_value(x, p));
        worst_ratio = std::max(worst_ratio, err / bound);
        if (err > bound) ++bound_fail;
      }
    }
  }
  return {grid_fail == 0 && bound_fail == 0,
          "grid mismatches=" + std::to_string(grid_fail) + " bound violations=" +
              std::to_string(bound_fail) + " worst err/bound=" + fmt(worst_ratio)};
}

// ---------------------------------------------------------------------------

struct FdCase {
  std::string name;
  std::function<Var(const std::vector<Var>&)> f;
  std::vector<Tensor> inputs;
};

std::vector<FdCase> fd_cases() {
  using sqnt::testing::weighted_sum;
  Gen g(21);
  std::vector<FdCase> c;
  const Shape s{2, 3, 4, 5};
  c.push_back({"add", [](auto& v) { return weighted_sum(add(v[0], v[1]), 1); }, {g.tensor(s), g.tensor(s)}});
  c.push_back({"sub", [](auto& v) { return weighted_sum(sub(v[0], v[1]), 2); }, {g.tensor(s), g.tensor(s)}});
  c.push_back({"mul", [](auto& v) { return weighted_sum(mul(v[0], v[1]), 3); }, {g.tensor(s), g.tensor(s)}});
  c.push_back({"scale", [](auto& v) { return weighted_sum(scale(v[0], -1.7), 4); }, {g.tensor(s)}});
  c.push_back({"scale_by", [](auto& v) { return weighted_sum(scale_by(v[0], v[1]), 5); }, {g.tensor(s), g.tensor({1})}});
  c.push_back({"square", [](auto& v) { return weighted_sum(square(v[0]), 6); }, {g.tensor(s)}});
  c.push_back({"sum", [](auto& v) { return sum(v[0]); }, {g.tensor(s)}});
  c.push_back({"mean", [](auto& v) { return mean(mul(v[0], v[0])); }, {g.tensor(s)}});
  c.push_back({"relu", [](auto& v) { return weighted_sum(relu(v[0]), 7); }, {g.tensor_away_from_zero(s)}});
  c.push_back({"conv2d", [](auto& v) { return weighted_sum(conv2d(v[0], v[1]), 8); },
               {g.tensor({2, 3, 5, 5}), g.tensor({4, 3, 3, 3})}});
  c.push_back({"conv2d_groups", [](auto& v) { return weighted_sum(conv2d(v[0], v[1], {1, Padding::same, 2}), 9); },
               {g.tensor({1, 4, 5, 4}), g.tensor({6, 2, 3, 3})}});
  c.push_back({"conv2d_depthwise", [](auto& v) { return weighted_sum(conv2d(v[0], v[1], {1, Padding::same, 3}), 10); },
               {g.tensor({1, 3, 4, 4}), g.tensor({3, 1, 3, 3})}});
  c.push_back({"conv2d_stride2_valid", [](auto& v) { return weighted_sum(conv2d(v[0], v[1], {2, Padding::valid, 1}), 11); },
               {g.tensor({1, 2, 7, 6}), g.tensor({3, 2, 3, 3})}});
  c.push_back({"conv2d_transpose", [](auto& v) { return weighted_sum(conv2d_transpose(v[0], v[1], {}, 5, 5), 12); },
               {g.tensor({2, 4, 5, 5}), g.tensor({4, 3, 3, 3})}});
  c.push_back({"avg_pool2", [](auto& v) { return weighted_sum(avg_pool2(v[0]), 13); }, {g.tensor({2, 2, 5, 6})}});
  c.push_back({"global_avg_pool", [](auto& v) { return weighted_sum(global_avg_pool(v[0]), 14); }, {g.tensor(s)}});
  c.push_back({"linear", [](auto& v) { return weighted_sum(linear(v[0], v[1], v[2]), 15); },
               {g.tensor({3, 5}), g.tensor({4, 5}), g.tensor({4})}});
  c.push_back({"concat_channels", [](auto& v) { return weighted_sum(concat_channels(v[0], v[1]), 16); },
               {g.tensor({2, 3, 3, 3}), g.tensor({2, 2, 3, 3})}});
  c.push_back({"slice_channels", [](auto& v) { return weighted_sum(slice_channels(v[0], 1, 2), 17); }, {g.tensor(s)}});
  c.push_back({"reshape", [](auto& v) { return weighted_sum(reshape(v[0], {6, 20}), 18); }, {g.tensor(s)}});
  c.push_back({"nodes_to_rows", [](auto& v) { return weighted_sum(nodes_to_rows(v[0]), 19); }, {g.tensor({1, 3, 7, 1})}});
  c.push_back({"rows_to_nodes", [](auto& v) { return weighted_sum(rows_to_nodes(v[0]), 20); }, {g.tensor({7, 3})}});
  static const std::vector<int> labels{0, 2, 1, 3, 2};
  static const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  c.push_back({"cross_entropy", [](auto& v) { return cross_entropy(v[0], labels); }, {g.tensor({5, 4})}});
  c.push_back({"cross_entropy_masked", [](auto& v) { return cross_entropy(v[0], labels, mask); }, {g.tensor({5, 4})}});
  c.push_back({"tv_smooth", [](auto& v) { return weighted_sum(tv_smooth(v[0], v[1], 0.05), 21); },
               {g.tensor({1, 2, 5, 4}), Tensor::scalar(0.3)}});
  c.push_back({"tv_norm", [](auto& v) { return tv_norm(v[0]); }, {g.tensor({1, 2, 5, 4})}});
  c.push_back({"normalize_weights", [](auto& v) { return weighted_sum(normalize_weights(v[0]), 22); }, {g.tensor({3, 2, 3, 3})}});

  static const GraphOperator graph(Graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {3, 4}, {4, 5}, {1, 4}}));
  c.push_back({"incidence_apply", [](auto& v) { return weighted_sum(incidence_apply(v[0], graph), 23); }, {g.tensor({1, 3, 6, 1})}});
  c.push_back({"incidence_apply_transpose", [](auto& v) { return weighted_sum(incidence_apply_transpose(v[0], graph), 24); },
               {g.tensor({1, 3, 7, 1})}});
  c.push_back({"transpose_kernel", [](auto& v) { return weighted_sum(transpose_kernel(v[0]), 25); }, {g.tensor({3, 2, 1, 1})}});

  // Block updates in full precision.
  const Shape xs{2, 3, 5, 5};
  c.push_back({"plain_res_sum", [](auto& v) { return weighted_sum(plain_res_sum(v[0], v[1], v[2], 0.5), 26); },
               {g.tensor(xs), g.tensor({3, 3, 3, 3}), g.tensor({3, 3, 3, 3})}});
  c.push_back({"sym_res_sum", [](auto& v) { return weighted_sum(sym_res_sum(v[0], v[1], 0.5), 27); },
               {g.tensor(xs), g.tensor({3, 3, 3, 3})}});
  c.push_back({"plain_mobile_sum", [](auto& v) { return weighted_sum(plain_mobile_sum(v[0], v[1], v[2], v[3], 0.5), 28); },
               {g.tensor(xs), g.tensor({6, 3, 1, 1}), g.tensor({6, 1, 3, 3}), g.tensor({3, 6, 1, 1})}});
  c.push_back({"sym_mobile_sum", [](auto& v) { return weighted_sum(sym_mobile_sum(v[0], v[1], v[2], 0.5), 29); },
               {g.tensor(xs), g.tensor({6, 3, 1, 1}), g.tensor({6, 1, 3, 3})}});
  c.push_back({"channel_change", [](auto& v) { return weighted_sum(channel_change_forward(v[0], sym_res_sum(v[0], v[1], 0.5), 5), 30); },
               {g.tensor(xs), g.tensor({3, 3, 3, 3})}});
  c.push_back({"classifier", [](auto& v) { return weighted_sum(classifier_forward(v[0], v[1], v[2]), 31); },
               {g.tensor(xs), g.tensor({4, 3}), g.tensor({4})}});
  c.push_back({"gcn_sym", [](auto& v) { return weighted_sum(gcn_sym_forward(v[0], graph, v[1], 0.5), 32); },
               {g.tensor({1, 3, 6, 1}), g.tensor({4, 3, 1, 1})}});
  c.push_back({"gcn_nonsym", [](auto& v) { return weighted_sum(gcn_nonsym_forward(v[0], graph, v[1], v[2], 0.5), 33); },
               {g.tensor({1, 3, 6, 1}), g.tensor({4, 3, 1, 1}), g.tensor({3, 4, 1, 1})}});
  return c;
}

Outcome ac2() {
  std::vector<std::string> bad;
  // Casewise alpha gradient, written out independently.
  Gen g(31);
  std::int64_t case_fail = 0;
  for (int t = 0; t < 10000; ++t) {
    const double alpha = g.uniform(0.1, 3.0);
    const double x = g.uniform(-1.5 * alpha, 1.5 * alpha);
    const int b = static_cast<int>(g.integer(2, 8));
    const double xb = fake_quant_value(x, {b, Signedness::Unsigned, alpha, true});
    const double want = x <= 0.0 ? 0.0 : (x >= alpha ? 1.0 : (xb - x) / alpha);
    if (alpha_gradient(x, xb, alpha) != want) ++case_fail;
  }
  // Documented cases.
  if (alpha_gradient(-0.1, 0.0, 1.0) != 0.0) ++case_fail;
  if (alpha_gradient(2.0, 1.0, 1.0) != 1.0) ++case_fail;
  const double xb = fake_quant_value(0.27, {4, Signedness::Unsigned, 1.0, true});
  if (std::abs(xb - 4.0 / 15.0) > 1e-15 || std::abs(alpha_gradient(0.27, xb, 1.0) - (4.0 / 15.0 - 0.27)) > 1e-15) ++case_fail;
  if (case_fail) bad.push_back("alpha_gradient cases=" + std::to_string(case_fail));

  // STE backward of the fake-quant node against the casewise rule.
  for (Signedness sign : {Signedness::Unsigned, Signedness::Signed}) {
    const double alpha = 0.8;
    Tensor x = g.tensor({64}, 0.8);
    Tensor w = g.tensor({64});
    Var xv = Var::leaf(x, true), av = Var::leaf(Tensor::scalar(alpha), true);
    backward(sum(mul(fake_quant(xv, av, 4, sign), Var::constant(w))));
    const double lo = sign == Signedness::Signed ? -alpha : 0.0;
    double ga = 0.0, gx_err = 0.0;
    for (std::int64_t i = 0; i < 64; ++i) {
      const double q = fake_quant_value(x[i], {4, sign, alpha, true});
      const double d = x[i] <= lo ? (sign == Signedness::Signed ? -1.0 : 0.0) : (x[i] >= alpha ? 1.0 : (q - x[i]) / alpha);
      ga += w[i] * d;
      const double want_gx = (x[i] > lo && x[i] < alpha) ? w[i] : 0.0;
      gx_err = std::max(gx_err, std::abs(xv.grad()[i] - want_gx));
    }
    if (gx_err != 0.0 || std::abs(av.grad()[0] - ga) > 1e-12) bad.push_back("fake_quant STE");
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& fc : fd_cases()) {
    const double e = sqnt::testing::gradcheck(fc.f, fc.inputs);
    if (e > worst) {
      worst = e;
      worst_name = fc.name;
    }
    if (!(e <= 1e-5)) bad.push_back(fc.name + " rel=" + fmt(e));
  }
  std::string detail = "fd cases=" + std::to_string(fd_cases().size()) + " worst rel=" + fmt(worst) + " (" + worst_name + ")";
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------

Outcome ac3() {
  Gen g(41);
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); };
  double worst_conv = 0.0, worst_pool = 0.0, worst_graph = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int groups = static_cast<int>(g.integer(1, 3));
    const auto cg = g.integer(1, 3), cog = g.integer(1, 3);
    const auto k = 2 * g.integer(0, 2) + 1;
    const int stride = static_cast<int>(g.integer(1, 2));
    const Padding pad = g.coin() ? Padding::same : Padding::valid;
    const auto h = g.integer(k, 9), w = g.integer(k, 9);
    const ConvSpec spec{stride, pad, groups};
    const Tensor x = g.tensor({g.integer(1, 2), groups * cg, h, w});
    const Tensor kk = g.tensor({groups * cog, cg, k, k});
    const Tensor ax = kernels::conv2d(x, kk, spec);
    const Tensor y = g.tensor(ax.shape());
    worst_conv = std::max(worst_conv, rel(dot(ax, y), dot(x, kernels::conv2d_transpose(y, kk, spec, h, w))));

    const Tensor px = g.tensor({g.integer(1, 2), g.integer(1, 3), g.integer(2, 9), g.integer(2, 9)});
    const Tensor py = g.tensor(kernels::avg_pool2(px).shape());
    worst_pool = std::max(worst_pool, rel(dot(kernels::avg_pool2(px), py), dot(px, kernels::avg_pool2_transpose(py, px.shape()))));

    const auto n = g.integer(2, 30);
    std::vector<std::pair<std::int64_t, std::int64_t>> edges;
    for (std::int64_t u = 0; u < n; ++u)
      for (std::int64_t v = u + 1; v < n; ++v)
        if (g.uniform(0, 1) < 0.2 || v == u + 1) edges.emplace_back(u, v);
    const GraphOperator s(Graph(n, edges), g.coin(), g.uniform(0.5, 2.0));
    const auto c = g.integer(1, 4);
    const Tensor gx = g.tensor({1, c, n, 1});
    const Tensor gy = g.tensor({1, c, s.num_edges(), 1});
    worst_graph = std::max(worst_graph, rel(dot(s.apply(gx), gy), dot(gx, s.apply_transpose(gy))));
  }
  const bool ok = worst_conv <= 1e-10 && worst_pool <= 1e-10 && worst_graph <= 1e-10;
  return {ok, "conv=" + fmt(worst_conv) + " pool=" + fmt(worst_pool) + " graph=" + fmt(worst_graph)};
}

// ---------------------------------------------------------------------------

struct RunResult {
  double accuracy = 0.0;
  double final_mse = 0.0;
  std::vector<double> layers;
};

RunResult train_and_trace(const ExperimentConfig& cfg, const ExperimentData& data) {
  Network net = build_network(cfg, data);
  run_training(net, data, cfg);
  RunResult r;
  r.accuracy = test_accuracy(net, data, cfg);
  const DivergenceReport rep = analyze_divergence(net, data, cfg, 256);
  r.final_mse = rep.final_mse();
  for (const auto& l : rep.layers) r.layers.push_back(l.mse);
  return r;
}

std::string series(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return "[" + s + "]";
}

// Trains the two architectures for three seeds and compares final-block MSE.
Outcome directional(const std::string& cfg_file, const std::string& unstable, const std::string& stable,
                    double max_seconds_per_seed, bool need_final_block_majority) {
  ExperimentConfig base = desk_config(cfg_file);
  std::vector<double> mse_u, mse_s;
  int majority = 0;
  bool acc_ok = true, time_ok = true, inputs_ok = true;
  for (int seed = 1; seed <= 3; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    base.set("seed", std::to_string(seed));
    const ExperimentData data = load_experiment_data(base);
    if (data.images && data.splits.test.size() < 256) inputs_ok = false;
    ExperimentConfig cu = base, cs = base;
    cu.set("arch", unstable);
    cs.set("arch", stable);
    const RunResult ru = train_and_trace(cu, data);
    const RunResult rs = train_and_trace(cs, data);
    const double secs = seconds_since(t0);
    mse_u.push_back(ru.final_mse);
    mse_s.push_back(rs.final_mse);
    majority += ru.final_mse > rs.final_mse;
    acc_ok = acc_ok && std::abs(ru.accuracy - rs.accuracy) <= 0.02 + 1e-12;
    time_ok = time_ok && secs < max_seconds_per_seed;
    std::cout << "  seed " << seed << ": " << unstable << " acc=" << fmt(ru.accuracy) << " mse=" << series(ru.layers)
              << "\n          " << stable << " acc=" << fmt(rs.accuracy) << " mse=" << series(rs.layers)
              << "\n          " << fmt(secs) << " s\n";
  }
  const double mu = median3(mse_u), ms = median3(mse_s);
  bool ok = acc_ok && time_ok && inputs_ok && ms <= mu;
  if (need_final_block_majority) ok = ok && majority >= 2;
  std::string d = "median final mse " + stable + "=" + fmt(ms) + " " + unstable + "=" + fmt(mu);
  if (need_final_block_majority) d += " seeds with " + unstable + ">" + stable + ": " + std::to_string(majority) + "/3";
  if (!acc_ok) d += "; accuracy gap above 2 points";
  if (!time_ok) d += "; seed runtime above limit";
  if (!inputs_ok) d += "; fewer than 256 held-out inputs";
  return {ok, d};
}

Outcome ac4() { return directional("desk_image.cfg", "plain_res", "sym_res", 600.0, true); }
Outcome ac10() { return directional("desk_graph.cfg", "gcn_nonsym", "gcn_sym", 100.0, false); }

// ---------------------------------------------------------------------------

Outcome ac5() {
  Gen g(51);
  int violations = 0;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto c = g.integer(1, 3), k = g.coin() ? std::int64_t{3} : std::int64_t{1}, hw = g.integer(3, 6);
    const Tensor kk = g.tensor({c, c, k, k});
    const Eigen::MatrixXd a = sqnt::testing::naive_conv_matrix(kk, c, hw, hw);
    const double nrm = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
    const double h = 0.9 * 2.0 / (nrm * nrm);
    const double xs = std::pow(10.0, g.uniform(-1, 1)), es = std::pow(10.0, g.uniform(-4, 1));
    const Tensor x = g.tensor({1, c, hw, hw}, xs);
    const Tensor eta = g.tensor({1, c, hw, hw}, es);
    const Var kv = Var::constant(kk);
    const Tensor s0 = sym_res_sum(Var::constant(x), kv, h).value();
    const Tensor s1 = sym_res_sum(Var::constant(axpy(1.0, eta, x)), kv, h).value();
    const double lhs = norm2(axpy(-1.0, s0, s1)), rhs = norm2(eta);
    worst = std::max(worst, lhs / rhs);
    if (lhs > rhs + 1e-10) ++violations;
  }
  // Plain witness: x + relu(x) doubles a positive perturbation.
  auto one = [](double v) { return Var::constant(Tensor({1, 1, 1, 1}, v)); };
  const double y0 = plain_res_sum(one(1.0), one(1.0), one(1.0), 1.0).value()[0];
  const double y1 = plain_res_sum(one(1.5), one(1.0), one(1.0), 1.0).value()[0];
  const double amp = (y1 - y0) / 0.5;
  return {violations == 0 && amp == 2.0,
          "violations=" + std::to_string(violations) + "/1000 worst ratio=" + fmt(worst) + " plain amplification=" + fmt(amp)};
}

// ---------------------------------------------------------------------------

Outcome ac6() {
  Gen g(61);
  double worst = 0.0;
  for (int t = 0; t < 60; ++t) {
    const auto c = g.integer(1, 2), hw = g.integer(2, c == 1 ? 8 : 5);
    const Tensor kk = g.tensor({c, c, 3, 3});
    const Eigen::MatrixXd a = sqnt::testing::naive_conv_matrix(kk, c, hw, hw);
    const double nrm = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
    const double h = g.uniform(0.05, 3.0) / (nrm * nrm);
    Tensor omega({1, c, hw, hw});
    for (auto& v : omega.values()) v = g.coin() ? g.uniform(0, 1) : static_cast<double>(g.integer(0, 1));
    Eigen::MatrixXd j = Eigen::MatrixXd::Identity(a.cols(), a.cols()) -
                        h * a.transpose() * sqnt::testing::as_vector(omega).asDiagonal() * a;
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(j).eigenvalues();
    const Spectrum sp = jacobian_spectrum(conv_operator(kk, {1, c, hw, hw}), h, omega);
    worst = std::max({worst, std::abs(sp.min - ev.minCoeff()), std::abs(sp.max - ev.maxCoeff())});
  }
  const LinearOperator unit = dense_operator(1, 1, {1.0});
  const Tensor om(unit.out_shape, 1.0);
  const double r1 = jacobian_spectrum(unit, 0.5, om).radius();
  const double r2 = jacobian_spectrum(unit, 2.0, om).radius();
  return {worst <= 1e-8 && r1 == 0.5 && r2 == 1.0,
          "max |eig - oracle|=" + fmt(worst) + " rho(h=0.5)=" + fmt(r1) + " rho(h=2)=" + fmt(r2)};
}

// ---------------------------------------------------------------------------

Outcome ac7() {
  // Two flat regions with a few isolated spikes.
  Tensor x({1, 1, 16, 16});
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t c = 0; c < 16; ++c) x.at(0, 0, y, c) = c < 8 ? 0.1 : 0.3;
  const std::vector<std::pair<int, int>> spikes{{3, 3}, {12, 5}, {6, 11}, {13, 13}, {1, 9}, {9, 2}};
  for (std::size_t i = 0; i < spikes.size(); ++i) x.at(0, 0, spikes[i].first, spikes[i].second) = i % 2 ? -1.1 : 1.3;

  Tensor s = x;
  // Smallest eps for which the explicit step keeps the max principle at
  // gamma^2 = 0.1; below it the step overshoots and raises the TV norm.
  const double eps = 4.0 * 0.1;
  for (int i = 0; i < 3; ++i) s = kernels::tv_smooth(s, 0.1, eps);
  auto range = [](const Tensor& t) {
    const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
    return *hi - *lo;
  };
  const QuantParams q{4, Signedness::Signed, 0.5, true};
  auto qmse = [&](const Tensor& t) { return mse(t, fake_quant(t, q)); };
  const double r0 = range(x), r1 = range(s);
  const double tv0 = kernels::tv_norm(x), tv1 = kernels::tv_norm(s);
  const double m0 = qmse(x), m1 = qmse(s);

  // [0,1,0] along one row, near-zero eps so the weights are 1/|Gx|.
  Tensor row({1, 1, 1, 3});
  row[1] = 1.0;
  const Tensor out = kernels::tv_smooth(row, 0.1, 1e-13);
  const double fix_err = std::max({std::abs(out[0] - 0.1), std::abs(out[1] - 0.8), std::abs(out[2] - 0.1)});

  const bool ok = tv_max_principle_holds(0.1, eps) && r1 < r0 && tv1 < tv0 && m1 < m0 && fix_err <= 1e-12;
  return {ok, "range " + fmt(r0) + "->" + fmt(r1) + " tv " + fmt(tv0) + "->" + fmt(tv1) + " qmse " + fmt(m0) + "->" +
                  fmt(m1) + " fixture err=" + fmt(fix_err)};
}

// ---------------------------------------------------------------------------

Outcome ac8() {
  ExperimentConfig cfg = desk_config("desk_image.cfg");
  auto build = [&](const std::string& arch) {
    cfg.set("arch", arch);
    return Network::build(build_specs(cfg, cfg.image.channels, cfg.image.classes), 1);
  };
  Network plain = build("plain_res");
  Network sym = build("sym_res");
  int blocks = 0;
  for (std::size_t i : sym.trunk_indices()) blocks += is_residual_kind(sym.specs()[i].kind) || sym.specs()[i].kind == BlockKind::channel_change;
  const double ratio = static_cast<double>(sym.trunk_parameter_count()) / static_cast<double>(plain.trunk_parameter_count());
  const bool ok = sym.trunk_kernel_count() == blocks && plain.trunk_kernel_count() == 2 * blocks && ratio >= 0.45 && ratio <= 0.55;
  return {ok, "blocks=" + std::to_string(blocks) + " kernels sym=" + std::to_string(sym.trunk_kernel_count()) +
                  " plain=" + std::to_string(plain.trunk_kernel_count()) + " params sym=" +
                  std::to_string(sym.trunk_parameter_count()) + " plain=" + std::to_string(plain.trunk_parameter_count()) +
                  " ratio=" + fmt(ratio)};
}

// ---------------------------------------------------------------------------

// Trains briefly, exports, and compares every quantization site.
std::int64_t int_mismatches(ExperimentConfig cfg, int inputs, std::string& note) {
  const ExperimentData data = load_experiment_data(cfg);
  Network net = build_network(cfg, data);
  run_training(net, data, cfg);
  const ForwardContext ctx = final_context(cfg.train);
  const RecordFile ckpt = RecordFile::deserialize(make_checkpoint(net, {ctx.bits_w, ctx.bits_a, DType::f64}).serialize());
  const IntModel model = IntModel::from_records(IntModel::from_checkpoint(ckpt).to_records());
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  std::shared_ptr<GraphOperator> graph;
  if (data.graph) {
    attach_graph(loaded.net, cfg, data);
    graph = std::make_shared<GraphOperator>(data.graph->graph, cfg.graph_normalized);
  }
  Gen g(71);
  const Shape shape = data.graph ? data.graph->features.shape() : Shape{1, cfg.image.channels, cfg.image.size, cfg.image.size};
  std::int64_t bad = 0, sites = 0;
  for (int i = 0; i < inputs; ++i) {
    const Tensor x = g.tensor(shape);
    QuantSiteLog a, b;
    ForwardContext c = ctx;
    c.sites = &a;
    loaded.net.forward(Var::constant(x), c);
    model.forward(x, graph.get(), &b);
    bad += count_site_mismatches(a, b);
    sites += static_cast<std::int64_t>(a.entries().size());
  }
  note += " " + cfg.arch + ":" + std::to_string(bad) + " (" + std::to_string(sites / inputs) + " sites)";
  return bad;
}

Outcome ac9() {
  std::int64_t bad = 0;
  std::string note;
  ExperimentConfig cnn = desk_config("desk_image.cfg");
  cnn.parse("depth = 3\nepochs = 4\ndata_count = 256\nbits_start = 5\nbits_period = 1\n");
  for (const char* arch : {"sym_res", "plain_res"}) {
    cnn.set("arch", arch);
    bad += int_mismatches(cnn, 100, note);
  }
  ExperimentConfig gcn = desk_config("desk_graph.cfg");
  gcn.parse("depth = 3\nepochs = 20\nbits_period = 5\n");
  for (const char* arch : {"gcn_sym", "gcn_nonsym"}) {
    gcn.set("arch", arch);
    bad += int_mismatches(gcn, 100, note);
  }
  return {bad == 0, "mismatching activations:" + note};
}

// ---------------------------------------------------------------------------

Outcome ac11() {
  int bad = 0;
  for (int target : {2, 3, 4, 8}) {
    const BitSchedule s{16, 1, 10, target};
    for (int e = 0; e <= 400; ++e) {
      const int want = std::max(target, 16 - e / 10);
      bad += bit_schedule(e, s) != want;
    }
  }
  // First epochs at 16 bits, first drop at epoch 10, 4 bits from epoch 120.
  const BitSchedule s4{16, 1, 10, 4};
  bad += bit_schedule(9, s4) != 16;
  bad += bit_schedule(10, s4) != 15;
  bad += bit_schedule(119, s4) != 5;
  bad += bit_schedule(120, s4) != 4;
  int lr_bad = 0;
  for (int total : {1, 10, 400}) {
    lr_bad += cosine_lr(0, total, 0.1) != 0.1;
    lr_bad += cosine_lr(total, total, 0.1) != 0.0;
  }
  return {bad == 0 && lr_bad == 0, "schedule mismatches=" + std::to_string(bad) + " lr endpoint mismatches=" + std::to_string(lr_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"AC-1", ac1}, {"AC-2", ac2}, {"AC-3", ac3}, {"AC-4", ac4},   {"AC-5", ac5},   {"AC-6", ac6},
      {"AC-7", ac7}, {"AC-8", ac8}, {"AC-9", ac9}, {"AC-10", ac10}, {"AC-11", ac11},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const auto& p) { return p.first == w; })) {
      std::cerr << "unknown check " << w << "\n";
      return 2;
    }
  }
  int failed = 0;
  for (const auto& [id, fn] : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << id << (o.pass ? " PASS " : " FAIL ") << o.detail << " [" << fmt(seconds_since(t0)) << " s]"
              << std::endl;
  }
  return failed ? 1 : 0;
}
