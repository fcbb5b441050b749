#include <gtest/gtest.h>

#include <cmath>

#include "common/test_support.hpp"
#include "sqnt/config.hpp"
#include "sqnt/stability.hpp"

using namespace sqnt;
using sqnt::testing::Gen;
using sqnt::testing::naive_conv_matrix;

namespace {

Network small_net(const std::string& arch, std::uint64_t seed = 1) {
  ExperimentConfig cfg;
  cfg.set("arch", arch);
  cfg.set("depth", "3");
  cfg.set("channels", "3");
  return Network::build(build_specs(cfg, 1, 2), seed);
}

}  // namespace

TEST(OperatorNorm, MatchesSvd) {
  Gen g(14);
  for (int t = 0; t < 10; ++t) {
    const auto c = g.integer(1, 3), hw = g.integer(3, 8);
    const Tensor k = g.tensor({c, c, 3, 3});
    const double want = Eigen::JacobiSVD<Eigen::MatrixXd>(naive_conv_matrix(k, c, hw, hw)).singularValues()(0);
    // Power iteration approaches from below.
    EXPECT_LE(operator_norm(k, {1, c, hw, hw}), want * (1.0 + 1e-12));
    EXPECT_NEAR(operator_norm(k, {1, c, hw, hw}, {1e-14, 100000, 0}), want, 1e-6 * want);
  }
  EXPECT_EQ(operator_norm(Tensor({1, 1, 3, 3}), {1, 1, 4, 4}), 0.0);
}

TEST(StepBound, Values) {
  EXPECT_DOUBLE_EQ(step_bound(4.0), 0.5);
  EXPECT_DOUBLE_EQ(step_bound(4.0, 2.0), 0.25);
  EXPECT_TRUE(std::isinf(step_bound(0.0)));
}

TEST(StepBound, ProjectionFixesSymmetricViolations) {
  Network net = small_net("sym_res");
  for (auto* k : net.kernels()) k->rescale(10.0);
  const Shape in{1, 1, 8, 8};
  const auto before = check_step_bound(net, in, {});
  EXPECT_TRUE(std::any_of(before.begin(), before.end(), [](const auto& r) { return r.applicable && !r.ok; }));
  EXPECT_GT(project_step_bounds(net, in, {}, 0.9), 0);
  for (const auto& r : check_step_bound(net, in, {})) {
    if (!r.applicable) continue;
    EXPECT_TRUE(r.ok);
    EXPECT_NEAR(r.h * r.norm_sq, 0.9 * 2.0, 1e-6);
  }
}

TEST(StepBound, PlainBlocksAreReportedNotProjected) {
  Network net = small_net("plain_res");
  for (auto* k : net.kernels()) k->rescale(10.0);
  EXPECT_EQ(project_step_bounds(net, {1, 1, 8, 8}, {}), 0);
  for (const auto& r : check_step_bound(net, {1, 1, 8, 8}, {}))
    if (r.applicable) EXPECT_FALSE(r.symmetric);
}

TEST(Spectrum, JacobiMatchesEigen) {
  Gen g(15);
  for (int t = 0; t < 10; ++t) {
    const auto n = g.integer(1, 30);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
    a = (a + a.transpose()).eval();
    std::vector<double> rm(static_cast<std::size_t>(n * n));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) rm[static_cast<std::size_t>(i * n + j)] = a(i, j);
    const auto got = symmetric_eigenvalues(rm, n);
    const Eigen::VectorXd want = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues();
    for (std::int64_t i = 0; i < n; ++i) EXPECT_NEAR(got[static_cast<std::size_t>(i)], want(i), 1e-10);
  }
}

// The Lanczos path on operators too large for the dense solver. Ritz values
// interlace, so the estimates sit inside the true range; the lower end (the
// one the step bound cares about) converges fast.
TEST(Spectrum, LanczosMatchesDense) {
  Gen g(16);
  for (int t = 0; t < 3; ++t) {
    const Tensor k = g.tensor({2, 2, 3, 3});
    const Shape in{1, 2, 16, 16};
    const Eigen::MatrixXd a = naive_conv_matrix(k, 2, 16, 16);
    const double n2 = std::pow(Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0), 2);
    const double h = 1.9 / n2;
    Tensor omega(in);
    for (auto& v : omega.values()) v = g.uniform(0, 1) < 0.8 ? 1.0 : g.uniform(0, 1);
    const Eigen::MatrixXd j = Eigen::MatrixXd::Identity(512, 512) -
                              h * a.transpose() * sqnt::testing::as_vector(omega).asDiagonal() * a;
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(j).eigenvalues();
    const Spectrum sp = jacobian_spectrum(conv_operator(k, in), h, omega, /*dense_limit=*/16, 3);
    EXPECT_NEAR(sp.min, ev.minCoeff(), 1e-8);
    EXPECT_GE(sp.min, ev.minCoeff() - 1e-10);
    EXPECT_LE(sp.max, ev.maxCoeff() + 1e-10);
    EXPECT_GT(sp.max, ev.maxCoeff() - 1e-3);
  }
}

TEST(Spectrum, RejectsOmegaOutsideUnitInterval) {
  const LinearOperator op = dense_operator(1, 1, {1.0});
  EXPECT_THROW(jacobian_spectrum(op, 0.5, Tensor(op.out_shape, 1.5)), std::invalid_argument);
}

TEST(Divergence, SelfComparisonIsZero) {
  Network net = small_net("sym_res");
  Gen g(17);
  const Tensor x = g.tensor({4, 1, 8, 8});
  ForwardContext ctx;
  ctx.bits_w = ctx.bits_a = 4;
  const auto [a, b] = paired_trace(net, ctx, net, ctx, x);
  const DivergenceReport r = divergence(a, b);
  ASSERT_EQ(r.layers.size(), net.trunk_indices().size());
  for (const auto& l : r.layers) EXPECT_EQ(l.mse, 0.0);
}

TEST(Divergence, QuantizedVsFullPrecisionIsPositive) {
  Network net = small_net("plain_res");
  Gen g(18);
  const auto [a, b] = paired_trace(net, g.tensor({4, 1, 8, 8}), 4, 4);
  EXPECT_GT(divergence(a, b).final_mse(), 0.0);
}

TEST(Divergence, FingerprintMismatchRefused) {
  Network a = small_net("sym_res"), b = small_net("plain_res");
  EXPECT_THROW(paired_trace(a, {}, b, {}, Tensor({1, 1, 8, 8})), std::invalid_argument);
  ActivationTrace t1(2), t2(3);
  EXPECT_THROW(divergence(t1, t2), std::invalid_argument);
}

// Symmetric steps inside the bound never amplify a perturbation in full precision.
TEST(Growth, SymmetricWithinBoundIsNonIncreasing) {
  Gen g(19);
  Network net = small_net("sym_res", 4);
  for (auto* k : net.kernels()) k->rescale(3.0);
  const Shape in{1, 1, 8, 8};
  project_step_bounds(net, in, {}, 0.9);
  const Tensor x = g.tensor(in);
  const Tensor eta = g.tensor(net.block_input_shapes(in).at(1), 1e-3);
  const auto norms = perturbation_growth(net, x, eta);
  ASSERT_EQ(norms.size(), net.trunk_indices().size() + 1);
  EXPECT_DOUBLE_EQ(norms[0], norm2(eta));
  const auto trunk = net.trunk_indices();
  int checked = 0;
  for (std::size_t i = 1; i < norms.size(); ++i) {
    if (net.specs()[trunk[i - 1]].kind != BlockKind::sym_res) continue;
    EXPECT_LE(norms[i], norms[i - 1] * (1.0 + 1e-9)) << "block " << trunk[i - 1];
    ++checked;
  }
  EXPECT_GE(checked, 2);
}
