#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "sqnt/config.hpp"
#include "sqnt/experiment.hpp"
#include "sqnt/training.hpp"

using namespace sqnt;

namespace {

ExperimentConfig tiny_image_config() {
  ExperimentConfig cfg;
  cfg.parse(
      "arch = sym_res\ndepth = 3\nchannels = 3\ndata_count = 64\nimage_size = 8\nclasses = 2\n"
      "epochs = 2\nbits_start = 5\nbits_period = 1\nbatch_size = 16\nlr = 0.01\n");
  return cfg;
}

}  // namespace

TEST(Schedule, StepsDownAndStops) {
  const BitSchedule s{16, 1, 10, 4};
  EXPECT_EQ(bit_schedule(0, s), 16);
  EXPECT_EQ(bit_schedule(9, s), 16);
  EXPECT_EQ(bit_schedule(10, s), 15);
  EXPECT_EQ(bit_schedule(120, s), 4);
  EXPECT_EQ(bit_schedule(100000, s), 4);
  EXPECT_EQ(bit_schedule(7, {8, 2, 3, 2}), 4);
  EXPECT_THROW(bit_schedule(-1, s), std::invalid_argument);
  EXPECT_THROW(bit_schedule(0, {4, 1, 10, 8}), std::invalid_argument);
  EXPECT_THROW(bit_schedule(0, {16, 1, 0, 4}), std::invalid_argument);
}

TEST(Schedule, CosineLr) {
  EXPECT_EQ(cosine_lr(0, 400, 0.1), 0.1);
  EXPECT_EQ(cosine_lr(400, 400, 0.1), 0.0);
  EXPECT_NEAR(cosine_lr(200, 400, 0.1), 0.05, 1e-15);
  EXPECT_THROW(cosine_lr(0, 0, 0.1), std::invalid_argument);
}

TEST(Schedule, ContextNeverBelowFinalWidths) {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.bits_w = 6;
  cfg.bits_a = 4;
  EXPECT_EQ(training_context(cfg, 0).bits_w, 16);
  EXPECT_EQ(final_context(cfg).bits_w, 6);
  EXPECT_EQ(final_context(cfg).bits_a, 4);
  cfg.quantize = false;
  EXPECT_FALSE(final_context(cfg).activations_active());
}

TEST(Sgd, HeavyBallUpdate) {
  Var w = Var::leaf(Tensor::scalar(1.0), true);
  SGD opt({{"w", w, ParamRole::weight}}, 0.5);
  for (int i = 0; i < 2; ++i) {
    backward(mul(w, Var::constant(Tensor::scalar(2.0))));  // gradient 2
    opt.step(0.1);
    opt.zero_grad();
  }
  // v1 = 2, w1 = 0.8; v2 = 0.5*2 + 2 = 3, w2 = 0.5.
  EXPECT_NEAR(w.value()[0], 0.5, 1e-15);
}

TEST(Sgd, ScalesStayPositiveGainsDoNot) {
  Var a = Var::leaf(Tensor::scalar(0.1), true), g = Var::leaf(Tensor::scalar(0.1), true);
  SGD opt({{"a", a, ParamRole::act_scale}, {"g", g, ParamRole::gain}}, 0.0);
  backward(add(a, g));
  opt.step(1.0);
  EXPECT_EQ(a.value()[0], kMinScale);
  EXPECT_NEAR(g.value()[0], -0.9, 1e-15);
}

TEST(Training, DeterministicForSeed) {
  const ExperimentConfig cfg = tiny_image_config();
  const ExperimentData data = load_experiment_data(cfg);
  Network a = build_network(cfg, data), b = build_network(cfg, data);
  const auto ra = run_training(a, data, cfg), rb = run_training(b, data, cfg);
  ASSERT_EQ(ra.log.size(), 2u);
  EXPECT_EQ(ra.log.back().train_loss, rb.log.back().train_loss);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value(), pb[i].var.value()) << pa[i].name;
}

TEST(Training, NonFiniteLossRaisesWithEpoch) {
  const ExperimentConfig cfg = tiny_image_config();
  ExperimentData data = load_experiment_data(cfg);
  data.images->images[0] = std::numeric_limits<double>::quiet_NaN();
  Network net = build_network(cfg, data);
  try {
    std::vector<std::int64_t> all(static_cast<std::size_t>(data.images->size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
    train_images(net, *data.images, all, {}, cfg.train);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
  }
}

TEST(Training, GraphTrainingLearnsEasySbm) {
  ExperimentConfig cfg;
  cfg.parse("task = graph\narch = gcn_sym\ndata_kind = sbm\ndepth = 2\nepochs = 60\nfeature_signal = 4\nsbm_nodes = 80\n"
            "bits_start = 8\nbits_period = 10\nlr = 0.02\n");
  const ExperimentData data = load_experiment_data(cfg);
  Network net = build_network(cfg, data);
  run_training(net, data, cfg);
  EXPECT_GT(test_accuracy(net, data, cfg), 0.8);
}

TEST(Training, TvRegularizer) {
  Tensor m({1, 1, 1, 3});
  m[1] = 1.0;
  EXPECT_DOUBLE_EQ(tv_regularizer({Var::constant(m), Var::constant(m)}, 0.5).value()[0], 2.0);
  EXPECT_THROW(tv_regularizer({}, -1.0), std::invalid_argument);
}

TEST(Training, SplitsHoldOutAQuarter) {
  const ImageSplits s = image_splits(200, 0.1, 3);
  EXPECT_EQ(s.test.size(), 50u);
  EXPECT_EQ(s.train.size() + s.val.size(), 150u);
  std::set<std::int64_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 200u);
  // The test rows do not depend on the validation fraction.
  EXPECT_EQ(image_splits(200, 0.3, 3).test, s.test);
}

TEST(Training, MetricsCsvHeader) {
  const std::string csv = metrics_csv({{0, 8, 0.1, 1.0, 0.5, 0.25}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,bits,lr,train_loss,train_acc,val_acc");
}
