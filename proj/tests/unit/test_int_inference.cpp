#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "common/test_support.hpp"
#include "sqnt/config.hpp"
#include "sqnt/int_inference.hpp"
#include "sqnt/kernels.hpp"
#include "sqnt/ops.hpp"

using namespace sqnt;
using sqnt::testing::Gen;

namespace {

IntTensor random_ints(Gen& g, Shape shape, int lo, int hi) {
  IntTensor t{shape, {}};
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  for (std::int64_t i = 0; i < n; ++i) t.values.push_back(static_cast<std::int32_t>(g.integer(lo, hi)));
  return t;
}

Tensor as_real(const IntTensor& t) {
  Tensor r(t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i) r[static_cast<std::int64_t>(i)] = t.values[i];
  return r;
}

ExperimentConfig image_config(const std::string& arch, bool tv = false) {
  ExperimentConfig cfg;
  cfg.parse("arch = " + arch + "\ndepth = 3\nchannels = 4\ndata_count = 32\nimage_size = 8\nclasses = 2\n");
  cfg.tv_enabled = tv;
  return cfg;
}

// Random (untrained) network with calibrated quantizers, as a checkpoint at 4 bits.
RecordFile quantized_checkpoint(const ExperimentConfig& cfg, Network& net, const Tensor& calib) {
  ForwardContext ctx;
  ctx.bits_w = ctx.bits_a = 4;
  net.forward(Var::constant(calib), ctx);
  return RecordFile::deserialize(make_checkpoint(net, {4, 4, DType::f64}).serialize());
}

std::int64_t mismatches(Network& net, const IntModel& model, Gen& g, int inputs) {
  ForwardContext ctx;
  ctx.bits_w = ctx.bits_a = 4;
  std::int64_t bad = 0;
  for (int i = 0; i < inputs; ++i) {
    const Tensor x = g.tensor({1, 1, 8, 8});
    QuantSiteLog a, b;
    ctx.sites = &a;
    const Tensor fl = net.forward(Var::constant(x), ctx).value();
    const Tensor il = model.forward(x, nullptr, &b);
    EXPECT_GT(a.entries().size(), 0u);
    bad += count_site_mismatches(a, b);
    EXPECT_LT(max_abs(axpy(-1.0, fl, il)), 1e-9);
  }
  return bad;
}

}  // namespace

TEST(IntKernels, ConvMatchesRealConv) {
  Gen g(30);
  for (int t = 0; t < 20; ++t) {
    const int groups = g.coin() ? 1 : 2;
    const auto cin = 2 * g.integer(1, 2), cout = 2 * g.integer(1, 2);
    const IntTensor x = random_ints(g, {2, cin, g.integer(3, 7), g.integer(3, 7)}, -15, 15);
    const IntTensor k = random_ints(g, {cout, cin / groups, 3, 3}, -7, 7);
    const IntTensor y = int_conv2d(x, k, groups);
    const Tensor want = kernels::conv2d(as_real(x), as_real(k), {1, kernels::Padding::same, groups});
    ASSERT_EQ(y.shape, want.shape());
    EXPECT_EQ(as_real(y), want);
  }
}

// <conv(x), y> == <x, conv^T(y)> holds exactly in integers.
TEST(IntKernels, TransposeIsExactAdjoint) {
  Gen g(31);
  for (int t = 0; t < 20; ++t) {
    const IntTensor k = random_ints(g, {4, 2, 3, 3}, -7, 7);
    const IntTensor x = random_ints(g, {1, 4, 5, 6}, -15, 15);
    const IntTensor y = random_ints(g, {1, 4, 5, 6}, -15, 15);
    const IntTensor kx = int_conv2d(x, k, 2), kty = int_conv2d_transpose(y, k, 2);
    std::int64_t lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) lhs += std::int64_t{kx.values[i]} * y.values[i];
    for (std::size_t i = 0; i < x.values.size(); ++i) rhs += std::int64_t{x.values[i]} * kty.values[i];
    EXPECT_EQ(lhs, rhs);
  }
}

TEST(IntKernels, SumPoolDropsOddEdge) {
  IntTensor x{{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}};
  const IntTensor y = int_sum_pool2(x);
  EXPECT_EQ(y.shape, (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.values, (std::vector<std::int32_t>{12}));
}

TEST(IntKernels, AccumulatorOverflowDetected) {
  const std::int32_t big = std::numeric_limits<std::int32_t>::max() / 4;
  IntTensor x{{1, 1, 3, 3}, std::vector<std::int32_t>(9, big)};
  IntTensor k{{1, 1, 3, 3}, std::vector<std::int32_t>(9, 1)};
  EXPECT_THROW(int_conv2d(x, k, 1), AccumulatorOverflow);
}

TEST(IntModel, MatchesFakeQuantPathSiteForSite) {
  Gen g(32);
  for (const char* arch : {"sym_res", "plain_res", "sym_mobile", "plain_mobile"}) {
    for (bool tv : {false, true}) {
      const ExperimentConfig cfg = image_config(arch, tv);
      Network net = Network::build(build_specs(cfg, 1, 2), 3);
      const RecordFile ckpt = quantized_checkpoint(cfg, net, g.tensor({8, 1, 8, 8}));
      const IntModel model = IntModel::from_checkpoint(ckpt);
      EXPECT_EQ(model.bits_w(), 4);
      EXPECT_EQ(mismatches(net, model, g, 10), 0) << arch << (tv ? " +tv" : "");
    }
  }
}

TEST(IntModel, SaveLoadRoundTrip) {
  Gen g(33);
  const ExperimentConfig cfg = image_config("sym_res");
  Network net = Network::build(build_specs(cfg, 1, 2), 4);
  const IntModel model = IntModel::from_checkpoint(quantized_checkpoint(cfg, net, g.tensor({8, 1, 8, 8})));
  const auto path = (std::filesystem::temp_directory_path() / "sqnt_int_model.sqnt").string();
  model.save(path);
  const IntModel back = IntModel::load(path);
  EXPECT_EQ(back.fingerprint(), model.fingerprint());
  const Tensor x = g.tensor({2, 1, 8, 8});
  EXPECT_EQ(back.forward(x), model.forward(x));
  EXPECT_EQ(mismatches(net, back, g, 5), 0);
}

TEST(IntModel, RefusesWrongGridAndFloatCheckpoints) {
  Gen g(34);
  const ExperimentConfig cfg = image_config("sym_res");
  Network net = Network::build(build_specs(cfg, 1, 2), 5);
  const RecordFile ckpt = quantized_checkpoint(cfg, net, g.tensor({8, 1, 8, 8}));
  EXPECT_THROW(IntModel::from_checkpoint(ckpt, 3), OffGridError);
  Network fp = Network::build(build_specs(cfg, 1, 2), 5);
  EXPECT_THROW(IntModel::from_checkpoint(make_checkpoint(fp, {})), FormatError);
}

TEST(IntModel, SiteMismatchCounting) {
  Grid a;
  a.ints = Tensor::from({3}, {1, 2, 3});
  a.step = 0.5;
  Grid b = a;
  b.ints[2] = 4;
  QuantSiteLog x, y, z;
  x.record("s", a);
  y.record("s", b);
  EXPECT_EQ(count_site_mismatches(x, x), 0);
  EXPECT_EQ(count_site_mismatches(x, y), 1);
  z.record("t", a);
  EXPECT_EQ(count_site_mismatches(x, z), 3);  // name disagreement counts the whole site
  x.record("s2", a);
  EXPECT_EQ(count_site_mismatches(x, y), 1 + 3);  // unmatched trailing site
}
