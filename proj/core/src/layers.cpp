#include "sqnt/layers.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <set>
#include <stdexcept>

namespace sqnt {

namespace {

struct KindName {
  BlockKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {BlockKind::opening, "opening"},
    {BlockKind::plain_res, "plain_res"},
    {BlockKind::sym_res, "sym_res"},
    {BlockKind::plain_mobile, "plain_mobile"},
    {BlockKind::sym_mobile, "sym_mobile"},
    {BlockKind::channel_change, "channel_change"},
    {BlockKind::avg_pool, "avg_pool"},
    {BlockKind::tv, "tv"},
    {BlockKind::classifier, "classifier"},
    {BlockKind::gcn_sym, "gcn_sym"},
    {BlockKind::gcn_nonsym, "gcn_nonsym"},
};

Tensor random_normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

constexpr double kAlphaFloor = 1e-6;

}  // namespace

std::string_view to_string(BlockKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

BlockKind parse_block_kind(std::string_view name) {
  for (const auto& kn : kKindNames)
    if (kn.name == name) return kn.kind;
  throw std::invalid_argument("unknown block kind '" + std::string(name) + "'");
}

bool is_residual_kind(BlockKind kind) {
  switch (kind) {
    case BlockKind::plain_res:
    case BlockKind::sym_res:
    case BlockKind::plain_mobile:
    case BlockKind::sym_mobile:
    case BlockKind::gcn_sym:
    case BlockKind::gcn_nonsym:
      return true;
    default:
      return false;
  }
}

bool is_symmetric_kind(BlockKind kind) {
  return kind == BlockKind::sym_res || kind == BlockKind::sym_mobile || kind == BlockKind::gcn_sym;
}

bool is_graph_kind(BlockKind kind) {
  return kind == BlockKind::gcn_sym || kind == BlockKind::gcn_nonsym;
}

void BlockSpec::validate() const {
  const std::string k(to_string(kind));
  auto fail = [&](const std::string& msg) { throw std::invalid_argument(k + ": " + msg); };
  if (kind != BlockKind::avg_pool && kind != BlockKind::tv &&
      (channels_in <= 0 || channels_out <= 0)) {
    fail("channel counts must be positive");
  }
  if (kernel_size <= 0 || kernel_size % 2 == 0) fail("kernel size must be odd and positive");
  if (stride != 1) fail("only stride 1 is supported; use avg_pool to reduce resolution");
  if (expansion < 1) fail("expansion must be >= 1");
  if (tv_gamma && !(*tv_gamma >= 0.0)) fail("tv_gamma must be non-negative");
  if (!(tv_eps > 0.0)) fail("tv_eps must be positive");
  const bool residual = is_residual_kind(kind) || kind == BlockKind::channel_change;
  if (residual && !(h > 0.0)) fail("step size h must be positive");
  if (is_graph_kind(kind) && kernel_size != 1) fail("graph layers use 1x1 channel mixing");
  if (is_residual_kind(kind) && channels_in != channels_out) {
    fail("residual steps need channels_in == channels_out");
  }
  if (kind == BlockKind::channel_change) {
    if (channels_out < channels_in || channels_out > 2 * channels_in) {
      fail("channel change needs channels_in <= channels_out <= 2 * channels_in, got " +
           std::to_string(channels_in) + " -> " + std::to_string(channels_out));
    }
    if (!is_residual_kind(update) || is_graph_kind(update)) {
      fail("channel change update must be a CNN residual kind");
    }
  }
}

// ---------------------------------------------------------------------------

ActQuantizer::ActQuantizer(std::string name, Signedness sign)
    : name_(std::move(name)), sign_(sign), alpha_(Var::leaf(Tensor::scalar(1.0), true)) {}

void ActQuantizer::set_alpha(double a) {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw std::invalid_argument("activation scale must be positive");
  }
  alpha_.mutable_value()[0] = a;
  initialized_ = true;
}

Var ActQuantizer::apply(const Var& x, const ForwardContext& ctx) {
  if (!ctx.activations_active()) return x;
  if (!initialized_) {
    const double p = percentile_abs(x.value(), 99.9);
    set_alpha(p > 0.0 ? std::max(p, kAlphaFloor) : 1.0);
  }
  Var q = fake_quant(x, alpha_, ctx.bits_a, sign_, true);
  if (ctx.sites) ctx.sites->record(name_, *q.grid());
  return q;
}

void ActQuantizer::collect(std::vector<Parameter>& out) const {
  out.push_back({name_ + ".alpha", alpha_, ParamRole::act_scale});
}

// ---------------------------------------------------------------------------

Kernel::Kernel(std::string name, Shape shape, bool quantized, std::mt19937_64& rng)
    : name_(std::move(name)), quantized_(quantized) {
  std::int64_t fan = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
  weight_ = Var::leaf(random_normal(shape, std::sqrt(1.0 / static_cast<double>(fan)), rng), true);
  if (quantized_) {
    gain_ = Var::leaf(Tensor::scalar(1.0 / std::sqrt(static_cast<double>(fan))), true);
    const double a = max_abs(normalize_weights(weight_.value()));
    alpha_ = Var::leaf(Tensor::scalar(a > 0.0 ? a : 1.0), true);
  }
}

Kernel::Kernel(std::string name, Tensor value)
    : name_(std::move(name)), quantized_(false), weight_(Var::leaf(std::move(value), true)) {}

std::int64_t Kernel::fan_in() const {
  std::int64_t fan = 1;
  for (std::size_t i = 1; i < weight_.shape().size(); ++i) fan *= weight_.shape()[i];
  return fan;
}

Var Kernel::effective(const ForwardContext& ctx) const {
  if (!quantized_) return weight_;
  Var q = fake_quant_weights(normalize_weights(weight_), alpha_, ctx.bits_w, ctx.weights_active());
  return scale_by(q, gain_);
}

Tensor Kernel::effective_value(const ForwardContext& ctx) const { return effective(ctx).value(); }

void Kernel::rescale(double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("kernel rescale factor must be positive");
  if (quantized_) {
    gain_.mutable_value()[0] *= factor;
  } else {
    for (auto& v : weight_.mutable_value().values()) v *= factor;
  }
}

void Kernel::collect(std::vector<Parameter>& out) const {
  out.push_back({name_ + ".w", weight_, ParamRole::weight});
  if (quantized_) {
    out.push_back({name_ + ".gain", gain_, ParamRole::gain});
    out.push_back({name_ + ".alpha", alpha_, ParamRole::weight_scale});
  }
}

// ---------------------------------------------------------------------------

ConvSpec conv_spec_for(const Shape& x, const Shape& k) {
  if (x.size() != 4 || k.size() != 4) throw ShapeError("convolution expects rank-4 tensors");
  if (k[1] <= 0 || x[1] % k[1] != 0) {
    throw ShapeError("kernel " + shape_str(k) + " does not match input " + shape_str(x));
  }
  ConvSpec spec;
  spec.groups = static_cast<int>(x[1] / k[1]);
  if (k[0] % spec.groups != 0) {
    throw ShapeError("kernel " + shape_str(k) + " does not match input " + shape_str(x));
  }
  return spec;
}

Var apply_kernel(const Var& x, const Var& k) {
  return conv2d(x, k, conv_spec_for(x.shape(), k.shape()));
}

Var apply_kernel_transpose(const Var& y, const Var& k, const Shape& x_shape) {
  return conv2d_transpose(y, k, conv_spec_for(x_shape, k.shape()), x_shape[2], x_shape[3]);
}

namespace {

Var hook(const std::function<Var(const Var&)>& f, const Var& v) { return f ? f(v) : v; }
Var activate(const StepHooks& q, const Var& v) { return q.activation ? q.activation(v) : relu(v); }

void require_channels(const Var& x, const Var& k, const char* what) {
  if (x.shape().size() != 4 || k.shape().size() != 4) {
    throw ShapeError(std::string(what) + ": expected rank-4 input and kernel");
  }
}

}  // namespace

Var plain_res_sum(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q) {
  require_channels(x, k2, "plain_res");
  if (k2.shape()[1] != x.shape()[1] || k1.shape()[0] != x.shape()[1] ||
      k1.shape()[1] != k2.shape()[0]) {
    throw ShapeError("plain_res: kernels " + shape_str(k1.shape()) + ", " +
                     shape_str(k2.shape()) + " do not match input " + shape_str(x.shape()));
  }
  Var r = hook(q.act, activate(q, apply_kernel(x, k2)));
  return add(x, scale(apply_kernel(r, k1), h));
}

Var sym_res_sum(const Var& x, const Var& k, double h, const StepHooks& q) {
  require_channels(x, k, "sym_res");
  if (k.shape()[1] != x.shape()[1]) {
    throw ShapeError("sym_res: kernel " + shape_str(k.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  Var r = hook(q.act, activate(q, apply_kernel(x, k)));
  return sub(x, scale(apply_kernel_transpose(r, k, x.shape()), h));
}

Var plain_mobile_sum(const Var& x, const Var& k1, const Var& k2, const Var& k3, double h,
                     const StepHooks& q) {
  require_channels(x, k1, "plain_mobile");
  const auto hidden = k1.shape()[0];
  if (k1.shape()[1] != x.shape()[1] || k2.shape()[0] != hidden || k2.shape()[1] != 1 ||
      k3.shape()[1] != hidden || k3.shape()[0] != x.shape()[1]) {
    throw ShapeError("plain_mobile: depthwise/pointwise kernels do not match input " +
                     shape_str(x.shape()));
  }
  Var r1 = hook(q.act, activate(q, apply_kernel(x, k1)));
  Var r2 = hook(q.act2, activate(q, apply_kernel(r1, k2)));
  return add(x, scale(apply_kernel(r2, k3), h));
}

Var sym_mobile_sum(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q) {
  require_channels(x, k1, "sym_mobile");
  const auto hidden = k1.shape()[0];
  if (k1.shape()[1] != x.shape()[1] || k2.shape()[0] != hidden || k2.shape()[1] != 1) {
    throw ShapeError("sym_mobile: depthwise/pointwise kernels do not match input " +
                     shape_str(x.shape()));
  }
  Var z = hook(q.mid, apply_kernel(x, k1));
  Var r = hook(q.act, activate(q, apply_kernel(z, k2)));
  Var t = hook(q.mid2, apply_kernel_transpose(r, k2, z.shape()));
  return sub(x, scale(apply_kernel_transpose(t, k1, x.shape()), h));
}

Var plain_res_forward(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q) {
  return hook(q.out, plain_res_sum(x, k1, k2, h, q));
}

Var sym_res_forward(const Var& x, const Var& k, double h, const StepHooks& q) {
  return hook(q.out, sym_res_sum(x, k, h, q));
}

Var plain_mobile_forward(const Var& x, const Var& k1, const Var& k2, const Var& k3, double h,
                         const StepHooks& q) {
  return hook(q.out, plain_mobile_sum(x, k1, k2, k3, h, q));
}

Var sym_mobile_forward(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q) {
  return hook(q.out, sym_mobile_sum(x, k1, k2, h, q));
}

Var channel_change_forward(const Var& x, const Var& update, std::int64_t n_out) {
  const auto n_in = x.shape().at(1);
  if (n_out < n_in || n_out > 2 * n_in) {
    throw std::invalid_argument("channel_change: need n_in <= n_out <= 2 n_in, got " +
                                std::to_string(n_in) + " -> " + std::to_string(n_out));
  }
  if (update.shape() != x.shape()) throw ShapeError("channel_change: update shape mismatch");
  if (n_out == n_in) return update;
  return concat_channels(update, slice_channels(x, 0, n_out - n_in));
}

Var opening_forward(const Var& y, const Var& k) { return relu(apply_kernel(y, k)); }

Var classifier_forward(const Var& x, const Var& w, const Var& b) {
  return linear(global_avg_pool(x), w, b);
}

bool tv_max_principle_holds(double gamma2, double eps) { return 4.0 * gamma2 / eps <= 1.0; }

void warn_tv_max_principle(const std::string& where, double gamma2, double eps) {
  if (tv_max_principle_holds(gamma2, eps)) return;
  static std::mutex mu;
  static std::set<std::string> warned;
  std::lock_guard lock(mu);
  if (!warned.insert(where).second) return;
  std::cerr << "warning: " << where << ": TV smoothing with gamma^2=" << gamma2
            << " and eps=" << eps << " has 4 gamma^2/eps > 1; the maximum principle is not"
            << " guaranteed\n";
}

Var tv_smooth_forward(const Var& x, const Var& gamma, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("tv_smooth: eps must be positive");
  return tv_smooth(x, gamma, eps);
}

// ---------------------------------------------------------------------------

Shape Block::output_shape(const Shape& in) const { return in; }

void ResidualBlock::init_quantizers(const std::string& prefix, bool two_acts, bool mids) {
  prefix_ = prefix;
  if (spec_.quant_activations) {
    act_q_.emplace(prefix + ".act", Signedness::Unsigned);
    if (two_acts) act2_q_.emplace(prefix + ".act2", Signedness::Unsigned);
    if (mids) {
      mid_q_.emplace(prefix + ".mid", Signedness::Signed);
      mid2_q_.emplace(prefix + ".mid2", Signedness::Signed);
    }
  }
  out_q_ = ActQuantizer(prefix + ".out", Signedness::Signed);
  if (spec_.tv_gamma) gamma_ = Var::leaf(Tensor::scalar(*spec_.tv_gamma), true);
}

StepHooks ResidualBlock::hooks(const ForwardContext& ctx) {
  StepHooks q;
  const ForwardContext* c = &ctx;
  if (gamma_.defined()) {
    const double eps = spec_.tv_eps;
    const double g = gamma_.value()[0];
    warn_tv_max_principle(prefix_, g * g, eps);
    q.activation = [this, eps](const Var& v) { return relu(tv_smooth_forward(v, gamma_, eps)); };
  }
  if (act_q_) q.act = [this, c](const Var& v) { return act_q_->apply(v, *c); };
  if (act2_q_) q.act2 = [this, c](const Var& v) { return act2_q_->apply(v, *c); };
  if (mid_q_) q.mid = [this, c](const Var& v) { return mid_q_->apply(v, *c); };
  if (mid2_q_) q.mid2 = [this, c](const Var& v) { return mid2_q_->apply(v, *c); };
  return q;
}

Var ResidualBlock::forward(const Var& x, const ForwardContext& ctx) {
  Var s = update_sum(x, ctx);
  return spec_.quant_activations && use_out_q_ ? out_q_.apply(s, ctx) : s;
}

void ResidualBlock::quantizers(std::vector<ActQuantizer*>& out) {
  if (mid_q_) out.push_back(&*mid_q_);
  if (act_q_) out.push_back(&*act_q_);
  if (act2_q_) out.push_back(&*act2_q_);
  if (mid2_q_) out.push_back(&*mid2_q_);
  if (spec_.quant_activations && use_out_q_) out.push_back(&out_q_);
}

void ResidualBlock::collect_common(std::vector<Parameter>& out) const {
  for (const auto* q : {&act_q_, &act2_q_, &mid_q_, &mid2_q_})
    if (*q) (*q)->collect(out);
  if (spec_.quant_activations && use_out_q_) out_q_.collect(out);
  if (gamma_.defined()) out.push_back({prefix_ + ".gamma", gamma_, ParamRole::tv_gamma});
}

namespace {

Shape square_kernel(std::int64_t co, std::int64_t ci, int k) { return {co, ci, k, k}; }

}  // namespace

OpeningBlock::OpeningBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng)
    : Block(spec),
      k_(prefix + ".k", square_kernel(spec.channels_out, spec.channels_in, spec.kernel_size), false,
         rng) {
  // He initialization for the ReLU that follows.
  for (auto& v : k_.weight().mutable_value().values()) v *= std::sqrt(2.0);
}

Var OpeningBlock::forward(const Var& x, const ForwardContext& ctx) {
  if (x.shape().size() != 4 || x.shape()[1] != spec_.channels_in) {
    throw ShapeError("opening: expected " + std::to_string(spec_.channels_in) +
                     " input channels, got " + shape_str(x.shape()));
  }
  return opening_forward(x, k_.effective(ctx));
}

Shape OpeningBlock::output_shape(const Shape& in) const {
  return {in.at(0), spec_.channels_out, in.at(2), in.at(3)};
}

void OpeningBlock::collect(std::vector<Parameter>& out) const { k_.collect(out); }

ClassifierBlock::ClassifierBlock(const BlockSpec& spec, const std::string& prefix,
                                 std::mt19937_64& rng)
    : Block(spec), prefix_(prefix) {
  w_ = Var::leaf(random_normal({spec.channels_out, spec.channels_in},
                               std::sqrt(1.0 / spec.channels_in), rng),
                 true);
  b_ = Var::leaf(Tensor(Shape{spec.channels_out}), true);
}

Var ClassifierBlock::forward(const Var& x, const ForwardContext& /*ctx*/) {
  if (x.shape().size() != 4 || x.shape()[1] != spec_.channels_in) {
    throw ShapeError("classifier: expected " + std::to_string(spec_.channels_in) +
                     " channels, got " + shape_str(x.shape()));
  }
  if (spec_.node_level) return linear(nodes_to_rows(x), w_, b_);
  return classifier_forward(x, w_, b_);
}

Shape ClassifierBlock::output_shape(const Shape& in) const {
  if (spec_.node_level) return {in.at(2), spec_.channels_out};
  return {in.at(0), spec_.channels_out};
}

void ClassifierBlock::collect(std::vector<Parameter>& out) const {
  out.push_back({prefix_ + ".w", w_, ParamRole::weight});
  out.push_back({prefix_ + ".b", b_, ParamRole::bias});
}

// ---------------------------------------------------------------------------

PlainResBlock::PlainResBlock(const BlockSpec& spec, const std::string& prefix,
                             std::mt19937_64& rng)
    : ResidualBlock(spec),
      k1_(prefix + ".k1", square_kernel(spec.channels_in, spec.channels_in, spec.kernel_size),
          spec.quant_weights, rng),
      k2_(prefix + ".k2", square_kernel(spec.channels_in, spec.channels_in, spec.kernel_size),
          spec.quant_weights, rng) {
  init_quantizers(prefix, false, false);
}

Var PlainResBlock::update_sum(const Var& x, const ForwardContext& ctx) {
  return plain_res_sum(x, k1_.effective(ctx), k2_.effective(ctx), spec_.h, hooks(ctx));
}

void PlainResBlock::collect(std::vector<Parameter>& out) const {
  k1_.collect(out);
  k2_.collect(out);
  collect_common(out);
}

std::optional<StepInfo> PlainResBlock::step_info(const Shape& in, const ForwardContext& ctx) const {
  StepInfo s;
  s.h = spec_.h;
  s.symmetric = false;
  s.factors = {conv_operator(k2_.effective_value(ctx), in),
               conv_operator(k1_.effective_value(ctx), in)};
  return s;
}

SymResBlock::SymResBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng)
    : ResidualBlock(spec),
      k_(prefix + ".k", square_kernel(spec.channels_in, spec.channels_in, spec.kernel_size),
         spec.quant_weights, rng) {
  init_quantizers(prefix, false, false);
}

Var SymResBlock::update_sum(const Var& x, const ForwardContext& ctx) {
  return sym_res_sum(x, k_.effective(ctx), spec_.h, hooks(ctx));
}

void SymResBlock::collect(std::vector<Parameter>& out) const {
  k_.collect(out);
  collect_common(out);
}

std::optional<StepInfo> SymResBlock::step_info(const Shape& in, const ForwardContext& ctx) const {
  StepInfo s;
  s.h = spec_.h;
  s.symmetric = true;
  s.factors = {conv_operator(k_.effective_value(ctx), in)};
  return s;
}

PlainMobileBlock::PlainMobileBlock(const BlockSpec& spec, const std::string& prefix,
                                   std::mt19937_64& rng)
    : ResidualBlock(spec),
      k1_(prefix + ".k1", square_kernel(std::int64_t{spec.expansion} * spec.channels_in,
                                        spec.channels_in, 1),
          spec.quant_weights, rng),
      k2_(prefix + ".k2",
          square_kernel(std::int64_t{spec.expansion} * spec.channels_in, 1, spec.kernel_size),
          spec.quant_weights, rng),
      k3_(prefix + ".k3", square_kernel(spec.channels_in,
                                        std::int64_t{spec.expansion} * spec.channels_in, 1),
          spec.quant_weights, rng) {
  init_quantizers(prefix, true, false);
}

Var PlainMobileBlock::update_sum(const Var& x, const ForwardContext& ctx) {
  return plain_mobile_sum(x, k1_.effective(ctx), k2_.effective(ctx), k3_.effective(ctx), spec_.h,
                          hooks(ctx));
}

void PlainMobileBlock::collect(std::vector<Parameter>& out) const {
  k1_.collect(out);
  k2_.collect(out);
  k3_.collect(out);
  collect_common(out);
}

std::optional<StepInfo> PlainMobileBlock::step_info(const Shape& in,
                                                    const ForwardContext& ctx) const {
  const Tensor k1 = k1_.effective_value(ctx);
  Shape hidden = in;
  hidden[1] = k1.dim(0);
  StepInfo s;
  s.h = spec_.h;
  s.symmetric = false;
  s.factors = {conv_operator(k1, in), conv_operator(k2_.effective_value(ctx), hidden),
               conv_operator(k3_.effective_value(ctx), hidden)};
  return s;
}

SymMobileBlock::SymMobileBlock(const BlockSpec& spec, const std::string& prefix,
                               std::mt19937_64& rng)
    : ResidualBlock(spec),
      k1_(prefix + ".k1", square_kernel(std::int64_t{spec.expansion} * spec.channels_in,
                                        spec.channels_in, 1),
          spec.quant_weights, rng),
      k2_(prefix + ".k2",
          square_kernel(std::int64_t{spec.expansion} * spec.channels_in, 1, spec.kernel_size),
          spec.quant_weights, rng) {
  init_quantizers(prefix, false, true);
}

Var SymMobileBlock::update_sum(const Var& x, const ForwardContext& ctx) {
  return sym_mobile_sum(x, k1_.effective(ctx), k2_.effective(ctx), spec_.h, hooks(ctx));
}

void SymMobileBlock::collect(std::vector<Parameter>& out) const {
  k1_.collect(out);
  k2_.collect(out);
  collect_common(out);
}

std::optional<StepInfo> SymMobileBlock::step_info(const Shape& in,
                                                  const ForwardContext& ctx) const {
  const Tensor k1 = k1_.effective_value(ctx);
  Shape hidden = in;
  hidden[1] = k1.dim(0);
  StepInfo s;
  s.h = spec_.h;
  s.symmetric = true;
  s.factors = {compose(conv_operator(k2_.effective_value(ctx), hidden), conv_operator(k1, in))};
  return s;
}

// ---------------------------------------------------------------------------

ChannelChangeBlock::ChannelChangeBlock(const BlockSpec& spec, const std::string& prefix,
                                       std::mt19937_64& rng)
    : Block(spec), out_q_(prefix + ".out", Signedness::Signed) {
  BlockSpec inner = spec;
  inner.kind = spec.update;
  inner.channels_out = spec.channels_in;
  auto block = make_block(inner, prefix + ".step", rng);
  inner_.reset(static_cast<ResidualBlock*>(block.release()));
  inner_->set_outer_quantizer(false);
}

Var ChannelChangeBlock::forward(const Var& x, const ForwardContext& ctx) {
  Var y = channel_change_forward(x, inner_->update_sum(x, ctx), spec_.channels_out);
  return spec_.quant_activations ? out_q_.apply(y, ctx) : y;
}

Shape ChannelChangeBlock::output_shape(const Shape& in) const {
  return {in.at(0), spec_.channels_out, in.at(2), in.at(3)};
}

void ChannelChangeBlock::collect(std::vector<Parameter>& out) const {
  inner_->collect(out);
  if (spec_.quant_activations) out_q_.collect(out);
}

void ChannelChangeBlock::quantizers(std::vector<ActQuantizer*>& out) {
  inner_->quantizers(out);
  if (spec_.quant_activations) out.push_back(&out_q_);
}

AvgPoolBlock::AvgPoolBlock(const BlockSpec& spec, const std::string& prefix)
    : Block(spec), out_q_(prefix + ".out", Signedness::Signed) {}

Var AvgPoolBlock::forward(const Var& x, const ForwardContext& ctx) {
  Var y = avg_pool2(x);
  return spec_.quant_activations ? out_q_.apply(y, ctx) : y;
}

Shape AvgPoolBlock::output_shape(const Shape& in) const {
  return {in.at(0), in.at(1), in.at(2) / 2, in.at(3) / 2};
}

void AvgPoolBlock::collect(std::vector<Parameter>& out) const {
  if (spec_.quant_activations) out_q_.collect(out);
}

void AvgPoolBlock::quantizers(std::vector<ActQuantizer*>& out) {
  if (spec_.quant_activations) out.push_back(&out_q_);
}

TvBlock::TvBlock(const BlockSpec& spec, const std::string& prefix)
    : Block(spec),
      prefix_(prefix),
      gamma_(Var::leaf(Tensor::scalar(spec.tv_gamma.value_or(0.1)), true)),
      out_q_(prefix + ".out", Signedness::Signed) {}

Var TvBlock::forward(const Var& x, const ForwardContext& ctx) {
  const double g = gamma_.value()[0];
  warn_tv_max_principle(prefix_, g * g, spec_.tv_eps);
  Var y = tv_smooth_forward(x, gamma_, spec_.tv_eps);
  return spec_.quant_activations ? out_q_.apply(y, ctx) : y;
}

void TvBlock::collect(std::vector<Parameter>& out) const {
  out.push_back({prefix_ + ".gamma", gamma_, ParamRole::tv_gamma});
  if (spec_.quant_activations) out_q_.collect(out);
}

void TvBlock::quantizers(std::vector<ActQuantizer*>& out) {
  if (spec_.quant_activations) out.push_back(&out_q_);
}

}  // namespace sqnt
