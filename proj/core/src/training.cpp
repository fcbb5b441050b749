#include "sqnt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "sqnt/stability.hpp"

namespace sqnt {

void BitSchedule::validate() const {
  if (target < 2) throw std::invalid_argument("bit schedule: target bits must be >= 2");
  if (period < 1) throw std::invalid_argument("bit schedule: period must be >= 1");
  if (decrement < 0) throw std::invalid_argument("bit schedule: decrement must be >= 0");
  if (start < target) throw std::invalid_argument("bit schedule: start must be >= target");
}

int bit_schedule(int epoch, const BitSchedule& s) {
  s.validate();
  if (epoch < 0) throw std::invalid_argument("bit schedule: negative epoch");
  const long long b = static_cast<long long>(s.start) -
                      static_cast<long long>(s.decrement) * (epoch / s.period);
  return static_cast<int>(std::max<long long>(s.target, b));
}

double cosine_lr(int epoch, int total, double lr0) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total must be positive");
  return lr0 * (1.0 + std::cos(std::numbers::pi * epoch / total)) / 2.0;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(tv_lambda >= 0.0)) throw std::invalid_argument("tv_lambda must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in [0, 1)");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
  if (!(project_fraction > 0.0 && project_fraction < 1.0)) {
    throw std::invalid_argument("project_fraction must be in (0, 1)");
  }
  schedule.validate();
  if (bits_w < 2 || bits_a < 2) throw std::invalid_argument("bit widths must be >= 2");
}

Var tv_regularizer(const std::vector<Var>& maps, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("tv_regularizer: lambda must be >= 0");
  Var total = Var::constant(Tensor::scalar(0.0));
  for (const auto& m : maps) total = add(total, tv_norm(m));
  return scale(total, lambda);
}

// ---------------------------------------------------------------------------

SGD::SGD(std::vector<Parameter> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape());
}

void SGD::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& var = params_[i].var;
    if (!var.has_grad()) continue;
    Tensor& v = velocity_[i];
    Tensor& w = var.mutable_value();
    const Tensor& g = var.grad();
    for (std::int64_t k = 0; k < w.numel(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      w[k] -= lr * v[k];
    }
    switch (params_[i].role) {
      case ParamRole::act_scale:
      case ParamRole::weight_scale:
        for (auto& x : w.values()) x = std::max(x, kMinScale);
        break;
      case ParamRole::tv_gamma:
        for (auto& x : w.values()) x = std::clamp(x, -kTvGammaMax, kTvGammaMax);
        break;
      default:
        break;
    }
  }
}

void SGD::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

double SGD::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_)
    if (p.var.has_grad()) s += dot(p.var.grad(), p.var.grad());
  return std::sqrt(s);
}

void SGD::scale_grads(double factor) {
  for (auto& p : params_) {
    if (!p.var.has_grad()) continue;
    for (auto& g : p.var.node().grad.values()) g *= factor;
  }
}

// ---------------------------------------------------------------------------

ForwardContext training_context(const TrainConfig& cfg, int epoch) {
  ForwardContext ctx;
  const int bits = cfg.quantize ? bit_schedule(epoch, cfg.schedule) : 32;
  ctx.bits_w = std::max(bits, cfg.bits_w);
  ctx.bits_a = std::max(bits, cfg.bits_a);
  ctx.quantize_weights = cfg.quantize_weights;
  ctx.quantize_activations = cfg.quantize_activations;
  return ctx;
}

ForwardContext final_context(const TrainConfig& cfg) {
  return training_context(cfg, std::max(cfg.epochs - 1, 0));
}

double accuracy(const Tensor& logits, std::span<const int> labels,
                std::span<const std::uint8_t> mask) {
  const auto n = logits.dim(0), c = logits.dim(1);
  std::int64_t hit = 0, total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    const double* row = logits.data() + i * c;
    const auto best = std::max_element(row, row + c) - row;
    hit += best == labels[static_cast<std::size_t>(i)];
    ++total;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

namespace {

// Loose norm estimate for the per-step projection; the projection fraction
// leaves room for the underestimate.
const PowerIterationOptions kProjectionNorm{1e-4, 200, 0};

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) throw TrainingError(epoch, "non-finite loss " + std::to_string(loss));
}

void optimizer_step(SGD& opt, double lr, double clip) {
  if (clip > 0.0) {
    const double n = opt.grad_norm();
    if (n > clip) opt.scale_grads(clip / n);
  }
  opt.step(lr);
  opt.zero_grad();
}

void flip_horizontal(Tensor& batch, std::int64_t n) {
  const auto c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w / 2; ++x) std::swap(batch.at(n, ch, y, x), batch.at(n, ch, y, w - 1 - x));
}

}  // namespace

double evaluate_images(Network& net, const ImageDataset& data, const std::vector<std::int64_t>& idx,
                       const ForwardContext& ctx, int batch_size) {
  if (idx.empty()) return 0.0;
  std::int64_t hits = 0;
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::vector<std::int64_t> part(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + static_cast<std::size_t>(batch_size))));
    const Tensor logits = net.forward(Var::constant(data.gather(part)), ctx).value();
    const auto labels = data.gather_labels(part);
    hits += std::llround(accuracy(logits, labels) * static_cast<double>(part.size()));
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double evaluate_graph(Network& net, const GraphDataset& data, const std::vector<std::uint8_t>& mask,
                      const ForwardContext& ctx) {
  const Tensor logits = net.forward(Var::constant(data.features), ctx).value();
  return accuracy(logits, data.labels, mask);
}

TrainResult train_images(Network& net, const ImageDataset& data,
                         const std::vector<std::int64_t>& train_idx,
                         const std::vector<std::int64_t>& val_idx, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_idx.empty()) throw TrainingError(0, "empty training set");
  SGD opt(net.parameters(), cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::int64_t> order = train_idx;
  TrainResult result;
  const Shape one{1, data.images.dim(1), data.images.dim(2), data.images.dim(3)};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ForwardContext ctx = training_context(cfg, epoch);
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    double loss_sum = 0.0;
    std::int64_t hits = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::int64_t> part(
          order.begin() + static_cast<std::ptrdiff_t>(b),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size))));
      Tensor batch = data.gather(part);
      if (cfg.flip_augment) {
        for (std::int64_t k = 0; k < batch.dim(0); ++k)
          if (rng() & 1) flip_horizontal(batch, k);
      }
      const auto labels = data.gather_labels(part);
      std::vector<Var> taps;
      ForwardContext c = ctx;
      if (cfg.tv_lambda > 0.0) c.taps = &taps;
      const Var logits = net.forward(Var::constant(batch), c);
      Var loss = cross_entropy(logits, labels);
      check_finite(loss.value()[0], epoch);
      loss_sum += loss.value()[0] * static_cast<double>(part.size());
      hits += std::llround(accuracy(logits.value(), labels) * static_cast<double>(part.size()));
      if (cfg.tv_lambda > 0.0) {
        loss = add(loss, tv_regularizer(taps, cfg.tv_lambda / static_cast<double>(part.size())));
      }
      backward(loss);
      optimizer_step(opt, lr, cfg.grad_clip);
      if (cfg.project_steps) project_step_bounds(net, one, ctx, cfg.project_fraction, 1.0, kProjectionNorm);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.bits = ctx.bits_a;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
    m.val_acc = evaluate_images(net, data, val_idx, ctx);
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

TrainResult train_graph(Network& net, const GraphDataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (std::none_of(data.train_mask.begin(), data.train_mask.end(), [](auto v) { return v != 0; })) {
    throw TrainingError(0, "empty training mask");
  }
  SGD opt(net.parameters(), cfg.momentum);
  TrainResult result;
  const Var x = Var::constant(data.features);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ForwardContext ctx = training_context(cfg, epoch);
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    std::vector<Var> taps;
    ForwardContext c = ctx;
    if (cfg.tv_lambda > 0.0) c.taps = &taps;
    const Var logits = net.forward(x, c);
    Var loss = cross_entropy(logits, data.labels, data.train_mask);
    check_finite(loss.value()[0], epoch);
    EpochMetrics m;
    m.epoch = epoch;
    m.bits = ctx.bits_a;
    m.lr = lr;
    m.train_loss = loss.value()[0];
    m.train_acc = accuracy(logits.value(), data.labels, data.train_mask);
    if (cfg.tv_lambda > 0.0) loss = add(loss, tv_regularizer(taps, cfg.tv_lambda));
    backward(loss);
    optimizer_step(opt, lr, cfg.grad_clip);
    if (cfg.project_steps) {
      project_step_bounds(net, data.features.shape(), ctx, cfg.project_fraction, 1.0, kProjectionNorm);
    }
    m.val_acc = evaluate_graph(net, data, data.val_mask, ctx);
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,bits,lr,train_loss,train_acc,val_acc\n";
  for (const auto& m : log) {
    os << m.epoch << ',' << m.bits << ',' << m.lr << ',' << m.train_loss << ',' << m.train_acc
       << ',' << m.val_acc << '\n';
  }
  return os.str();
}

}  // namespace sqnt
