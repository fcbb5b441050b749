#pragma once

// Network building blocks: learnable kernels with weight quantization,
// activation quantizers, and the residual / symmetric / connector blocks.

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sqnt/autograd.hpp"
#include "sqnt/linear_operator.hpp"
#include "sqnt/ops.hpp"
#include "sqnt/quant.hpp"

namespace sqnt {

class GraphOperator;

enum class BlockKind {
  opening,
  plain_res,
  sym_res,
  plain_mobile,
  sym_mobile,
  channel_change,
  avg_pool,
  tv,
  classifier,
  gcn_sym,
  gcn_nonsym,
};

std::string_view to_string(BlockKind kind);
/// Throws std::invalid_argument for unknown names.
BlockKind parse_block_kind(std::string_view name);
bool is_residual_kind(BlockKind kind);
bool is_symmetric_kind(BlockKind kind);
bool is_graph_kind(BlockKind kind);

/// Description of one network block.
struct BlockSpec {
  BlockKind kind = BlockKind::sym_res;
  int channels_in = 0;
  int channels_out = 0;
  int kernel_size = 3;
  double h = 0.5;  // time step of residual updates
  bool quant_weights = true;
  bool quant_activations = true;
  std::optional<double> tv_gamma;  // set: activations become relu(S(.)) with this initial gamma
  double tv_eps = 1e-3;
  int stride = 1;
  BlockKind update = BlockKind::sym_res;  // residual step used inside channel_change
  int expansion = 1;                      // mobile blocks: hidden width = expansion * channels
  bool node_level = false;                // classifier emits one row of logits per graph node

  /// Checks the per-block invariants; throws std::invalid_argument.
  void validate() const;
};

inline constexpr double kTvEps = 1e-3;
/// Upper clip for |gamma| (gamma^2 <= 0.25).
inline constexpr double kTvGammaMax = 0.5;

// ---------------------------------------------------------------------------

/// Integer indices captured at quantization sites, in forward order.
class QuantSiteLog {
 public:
  struct Entry {
    std::string site;
    Tensor ints;
    double step = 0.0;
  };
  void record(std::string site, const Grid& grid) {
    entries_.push_back({std::move(site), grid.ints, grid.step});
  }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

/// Per-forward switches. Bit widths of 32 or more disable the quantizer.
struct ForwardContext {
  int bits_w = 32;
  int bits_a = 32;
  bool quantize_weights = true;
  bool quantize_activations = true;
  QuantSiteLog* sites = nullptr;
  const GraphOperator* graph = nullptr;
  std::vector<Var>* taps = nullptr;  // receives every trunk block output

  bool weights_active() const { return quantize_weights && bits_w < 32; }
  bool activations_active() const { return quantize_activations && bits_a < 32; }
};

enum class ParamRole { weight, gain, weight_scale, act_scale, tv_gamma, bias };

struct Parameter {
  std::string name;
  Var var;
  ParamRole role;
};

/// Activation quantizer with a learnable scale. The scale is initialized on
/// first active use from the 99.9th percentile of |x|.
class ActQuantizer {
 public:
  ActQuantizer(std::string name, Signedness sign);

  Var apply(const Var& x, const ForwardContext& ctx);
  QuantParams params(int bits) const { return {bits, sign_, alpha_.value()[0], true}; }

  const std::string& name() const { return name_; }
  Signedness sign() const { return sign_; }
  Var& alpha() { return alpha_; }
  const Var& alpha() const { return alpha_; }
  bool initialized() const { return initialized_; }
  void set_alpha(double a);

  void collect(std::vector<Parameter>& out) const;

 private:
  std::string name_;
  Signedness sign_;
  Var alpha_;
  bool initialized_ = false;
};

/// Learnable convolution kernel.
///
/// Quantized kernels are used as gain * Q_w(normalize(w)): the normalized
/// weights are fake-quantized on a signed grid of scale alpha_w and a
/// per-kernel gain restores the operator magnitude that normalization removes.
/// Unquantized kernels are used as-is.
class Kernel {
 public:
  Kernel(std::string name, Shape shape, bool quantized, std::mt19937_64& rng);
  /// Wraps explicit values (no normalization, no quantization).
  Kernel(std::string name, Tensor value);

  Var effective(const ForwardContext& ctx) const;
  /// Effective kernel values without building a graph.
  Tensor effective_value(const ForwardContext& ctx) const;
  /// Weight-quantizer parameters at `bits`.
  QuantParams weight_params(int bits) const { return {bits, Signedness::Signed, alpha_.value()[0], true}; }

  bool quantized() const { return quantized_; }
  const std::string& name() const { return name_; }
  const Shape& shape() const { return weight_.shape(); }
  std::int64_t fan_in() const;
  Var& weight() { return weight_; }
  const Var& weight() const { return weight_; }
  Var& gain() { return gain_; }
  const Var& gain() const { return gain_; }
  Var& alpha() { return alpha_; }
  const Var& alpha() const { return alpha_; }

  /// Multiplies the effective operator by `factor` > 0.
  void rescale(double factor);

  void collect(std::vector<Parameter>& out) const;

 private:
  std::string name_;
  bool quantized_;
  Var weight_;
  Var gain_;
  Var alpha_;
};

/// Convolution spec for a kernel applied to x: 'same' padding, groups inferred.
ConvSpec conv_spec_for(const Shape& x, const Shape& k);
Var apply_kernel(const Var& x, const Var& k);
Var apply_kernel_transpose(const Var& y, const Var& k, const Shape& x_shape);

/// Optional quantization hooks and the nonlinearity used by a residual step.
/// Empty functions are the identity (relu for `activation`).
struct StepHooks {
  std::function<Var(const Var&)> activation;  // sigma, or sigma∘S with TV
  std::function<Var(const Var&)> act;         // after the first sigma
  std::function<Var(const Var&)> act2;        // after the second sigma (plain mobile)
  std::function<Var(const Var&)> mid;         // before K2 (sym mobile: on K1 x)
  std::function<Var(const Var&)> mid2;        // before K1^T (sym mobile: on K2^T r)
  std::function<Var(const Var&)> out;         // outer quantizer on the block output
};

// Residual updates before the outer quantizer.
Var plain_res_sum(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q = {});
Var sym_res_sum(const Var& x, const Var& k, double h, const StepHooks& q = {});
Var plain_mobile_sum(const Var& x, const Var& k1, const Var& k2, const Var& k3, double h,
                     const StepHooks& q = {});
Var sym_mobile_sum(const Var& x, const Var& k1, const Var& k2, double h, const StepHooks& q = {});

/// Q(x + h K1 Q(sigma(K2 x))).
Var plain_res_forward(const Var& x, const Var& k1, const Var& k2, double h,
                      const StepHooks& q = {});
/// Q(x - h K^T Q(sigma(K x))).
Var sym_res_forward(const Var& x, const Var& k, double h, const StepHooks& q = {});
/// x + h K3 sigma(K2 sigma(K1 x)), K1/K3 1x1 and K2 depthwise.
Var plain_mobile_forward(const Var& x, const Var& k1, const Var& k2, const Var& k3, double h,
                         const StepHooks& q = {});
/// x - h K1^T K2^T sigma(K2 K1 x), the depthwise K2 applied twice.
Var sym_mobile_forward(const Var& x, const Var& k1, const Var& k2, double h,
                       const StepHooks& q = {});
/// Concatenates `update` (the residual step on x) with the first n_out - n_in
/// channels of x. Throws std::invalid_argument unless n_in <= n_out <= 2 n_in.
Var channel_change_forward(const Var& x, const Var& update, std::int64_t n_out);
Var opening_forward(const Var& y, const Var& k);
/// Global average pool + affine map: logits [N, classes].
Var classifier_forward(const Var& x, const Var& w, const Var& b);

/// Anisotropic TV smoothing S(x) = x - gamma^2 (Dx + Dy) x.
Var tv_smooth_forward(const Var& x, const Var& gamma, double eps = kTvEps);
/// True when 4 gamma^2 / eps <= 1, the row-sum condition under which
/// min(x) <= S(x) <= max(x) is guaranteed.
bool tv_max_principle_holds(double gamma2, double eps);
/// Prints a warning to stderr the first time `where` violates the condition.
void warn_tv_max_principle(const std::string& where, double gamma2, double eps);

// ---------------------------------------------------------------------------

/// Spectral data of a residual step for the stability checks: the step is
/// governed by h * ||factors||^2 (product of norms for plain steps).
struct StepInfo {
  double h = 0.0;
  bool symmetric = false;
  std::vector<LinearOperator> factors;
};

class Block {
 public:
  explicit Block(BlockSpec spec) : spec_(std::move(spec)) {}
  virtual ~Block() = default;
  Block(const Block&) = delete;
  Block& operator=(const Block&) = delete;

  const BlockSpec& spec() const { return spec_; }
  BlockKind kind() const { return spec_.kind; }

  virtual Var forward(const Var& x, const ForwardContext& ctx) = 0;
  virtual Shape output_shape(const Shape& in) const;
  virtual void collect(std::vector<Parameter>& out) const = 0;
  /// Activation quantizers in use, in forward order.
  virtual void quantizers(std::vector<ActQuantizer*>& /*out*/) {}
  /// Number of learnable convolution kernels.
  virtual int kernel_count() const { return 0; }

  virtual std::optional<StepInfo> step_info(const Shape& /*in*/, const ForwardContext& /*ctx*/) const {
    return std::nullopt;
  }
  /// Scales the step operator so that ||K||^2 changes by factor^2.
  virtual void rescale_step(double /*factor*/) {}

 protected:
  BlockSpec spec_;
};

/// Residual blocks expose their pre-quantization sum for channel changes.
class ResidualBlock : public Block {
 public:
  using Block::Block;
  virtual Var update_sum(const Var& x, const ForwardContext& ctx) = 0;
  Var forward(const Var& x, const ForwardContext& ctx) override;
  void quantizers(std::vector<ActQuantizer*>& out) override;
  ActQuantizer& out_quant() { return out_q_; }
  /// Quantizers applied inside the step, keyed by site suffix.
  ActQuantizer* act_quant() { return act_q_ ? &*act_q_ : nullptr; }
  ActQuantizer* act2_quant() { return act2_q_ ? &*act2_q_ : nullptr; }
  ActQuantizer* mid_quant() { return mid_q_ ? &*mid_q_ : nullptr; }
  ActQuantizer* mid2_quant() { return mid2_q_ ? &*mid2_q_ : nullptr; }
  /// TV gamma, undefined unless spec.tv_gamma is set.
  const Var& tv_gamma() const { return gamma_; }
  Var& tv_gamma() { return gamma_; }
  /// Channel changes own the outer quantizer of their inner step.
  void set_outer_quantizer(bool on) { use_out_q_ = on; }

 protected:
  StepHooks hooks(const ForwardContext& ctx);
  std::optional<ActQuantizer> act_q_;
  std::optional<ActQuantizer> act2_q_;
  std::optional<ActQuantizer> mid_q_;
  std::optional<ActQuantizer> mid2_q_;
  ActQuantizer out_q_{"out", Signedness::Signed};
  Var gamma_;  // TV gamma when spec.tv_gamma is set
  std::string prefix_;
  bool use_out_q_ = true;

  void init_quantizers(const std::string& prefix, bool two_acts, bool mids);
  void collect_common(std::vector<Parameter>& out) const;
};

std::unique_ptr<Block> make_block(const BlockSpec& spec, const std::string& prefix,
                                  std::mt19937_64& rng);

// Concrete blocks are exposed for tests and for the integer exporter.

class OpeningBlock : public Block {
 public:
  OpeningBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var forward(const Var& x, const ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return 1; }
  Kernel& kernel() { return k_; }

 private:
  Kernel k_;
};

class ClassifierBlock : public Block {
 public:
  ClassifierBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var forward(const Var& x, const ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  void collect(std::vector<Parameter>& out) const override;
  Var& weight() { return w_; }
  Var& bias() { return b_; }

 private:
  std::string prefix_;
  Var w_;
  Var b_;
};

class PlainResBlock : public ResidualBlock {
 public:
  PlainResBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var update_sum(const Var& x, const ForwardContext& ctx) override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return 2; }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override;
  Kernel& k1() { return k1_; }
  Kernel& k2() { return k2_; }

 private:
  Kernel k1_, k2_;
};

class SymResBlock : public ResidualBlock {
 public:
  SymResBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var update_sum(const Var& x, const ForwardContext& ctx) override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return 1; }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override;
  void rescale_step(double factor) override { k_.rescale(factor); }
  Kernel& kernel() { return k_; }

 private:
  Kernel k_;
};

class PlainMobileBlock : public ResidualBlock {
 public:
  PlainMobileBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var update_sum(const Var& x, const ForwardContext& ctx) override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return 3; }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override;
  Kernel& k1() { return k1_; }
  Kernel& k2() { return k2_; }
  Kernel& k3() { return k3_; }

 private:
  Kernel k1_, k2_, k3_;
};

class SymMobileBlock : public ResidualBlock {
 public:
  SymMobileBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var update_sum(const Var& x, const ForwardContext& ctx) override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return 2; }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override;
  void rescale_step(double factor) override { k1_.rescale(factor); }
  Kernel& k1() { return k1_; }
  Kernel& k2() { return k2_; }

 private:
  Kernel k1_, k2_;
};

/// n_in -> n_out connector around an inner residual step.
class ChannelChangeBlock : public Block {
 public:
  ChannelChangeBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var forward(const Var& x, const ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return inner_->kernel_count(); }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override {
    return inner_->step_info(in, ctx);
  }
  void rescale_step(double factor) override { inner_->rescale_step(factor); }
  void quantizers(std::vector<ActQuantizer*>& out) override;
  ResidualBlock& inner() { return *inner_; }
  ActQuantizer& out_quant() { return out_q_; }

 private:
  std::unique_ptr<ResidualBlock> inner_;
  ActQuantizer out_q_;
};

class AvgPoolBlock : public Block {
 public:
  AvgPoolBlock(const BlockSpec& spec, const std::string& prefix);
  Var forward(const Var& x, const ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  void collect(std::vector<Parameter>& out) const override;
  void quantizers(std::vector<ActQuantizer*>& out) override;
  ActQuantizer& out_quant() { return out_q_; }

 private:
  ActQuantizer out_q_;
};

class TvBlock : public Block {
 public:
  TvBlock(const BlockSpec& spec, const std::string& prefix);
  Var forward(const Var& x, const ForwardContext& ctx) override;
  void collect(std::vector<Parameter>& out) const override;
  void quantizers(std::vector<ActQuantizer*>& out) override;
  Var& gamma() { return gamma_; }
  ActQuantizer& out_quant() { return out_q_; }

 private:
  std::string prefix_;
  Var gamma_;
  ActQuantizer out_q_;
};

}  // namespace sqnt
