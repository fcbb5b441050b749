#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqnt/datasets.hpp"
#include "sqnt/network.hpp"

namespace sqnt {

/// Gradual bit reduction: start, start - decrement every `period` epochs,
/// never below target.
struct BitSchedule {
  int start = 16;
  int decrement = 1;
  int period = 10;
  int target = 4;

  void validate() const;
};

int bit_schedule(int epoch, const BitSchedule& s);
/// lr0 (1 + cos(pi epoch / total)) / 2.
double cosine_lr(int epoch, int total, double lr0);

struct TrainConfig {
  int epochs = 100;
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool quantize = true;
  bool quantize_weights = true;
  bool quantize_activations = true;
  BitSchedule schedule;
  // Final widths; the schedule never goes below them. 32 or more disables.
  int bits_w = 4;
  int bits_a = 4;
  double tv_lambda = 0.0;
  double val_fraction = 0.1;
  double grad_clip = 0.0;       // global gradient norm cap, 0 = off
  bool project_steps = false;   // rescale symmetric steps violating the bound after every update
  double project_fraction = 0.9;
  bool flip_augment = false;

  void validate() const;
};

/// Raised when training cannot continue, e.g. a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(int epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// lambda * sum of the l1 total variation of every map.
Var tv_regularizer(const std::vector<Var>& maps, double lambda);

/// Heavy-ball SGD: v = momentum v + g; p -= lr v. Quantizer scales are
/// projected to stay >= 1e-6 (kernel gains are free) and TV gammas to |gamma| <= kTvGammaMax.
class SGD {
 public:
  SGD(std::vector<Parameter> params, double momentum);
  void step(double lr);
  void zero_grad();
  /// Global L2 norm of the current gradients.
  double grad_norm() const;
  void scale_grads(double factor);
  const std::vector<Parameter>& params() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
};

inline constexpr double kMinScale = 1e-6;

struct EpochMetrics {
  int epoch = 0;
  int bits = 32;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Forward context used at `epoch`.
ForwardContext training_context(const TrainConfig& cfg, int epoch);
/// Context for evaluating a network trained to the end of the schedule.
ForwardContext final_context(const TrainConfig& cfg);

TrainResult train_images(Network& net, const ImageDataset& data,
                         const std::vector<std::int64_t>& train_idx,
                         const std::vector<std::int64_t>& val_idx, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {});
/// Full-batch training on the train mask; val accuracy on the val mask.
TrainResult train_graph(Network& net, const GraphDataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

double accuracy(const Tensor& logits, std::span<const int> labels,
                std::span<const std::uint8_t> mask = {});
double evaluate_images(Network& net, const ImageDataset& data,
                       const std::vector<std::int64_t>& idx, const ForwardContext& ctx,
                       int batch_size = 128);
double evaluate_graph(Network& net, const GraphDataset& data,
                      const std::vector<std::uint8_t>& mask, const ForwardContext& ctx);

/// CSV with header epoch,bits,lr,train_loss,train_acc,val_acc.
std::string metrics_csv(const std::vector<EpochMetrics>& log);

}  // namespace sqnt
