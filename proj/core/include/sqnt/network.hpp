#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqnt/graph.hpp"
#include "sqnt/layers.hpp"

namespace sqnt {

/// Rejected network description; `index` is the offending BlockSpec.
class BuildError : public std::invalid_argument {
 public:
  BuildError(std::size_t index, const std::string& what)
      : std::invalid_argument("block " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Snapshot of one trunk block output.
struct TraceEntry {
  std::size_t index = 0;  // position in the BlockSpec list
  BlockKind kind = BlockKind::sym_res;
  Tensor activation;
};
using ActivationTrace = std::vector<TraceEntry>;

struct BlockStepInfo {
  std::size_t index = 0;
  BlockKind kind = BlockKind::sym_res;
  std::optional<StepInfo> info;
};

/// Ordered blocks: an opening layer, a trunk, and a classifier.
///
/// The trunk input (the opening output) passes a signed activation quantizer
/// so that every trunk block sees grid values when activations are quantized.
class Network {
 public:
  /// Validates adjacency and builds parameters from `seed`. Throws BuildError.
  static Network build(std::vector<BlockSpec> specs, std::uint64_t seed);

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const std::vector<BlockSpec>& specs() const { return specs_; }
  std::size_t size() const { return blocks_.size(); }
  Block& block(std::size_t i) { return *blocks_.at(i); }
  const Block& block(std::size_t i) const { return *blocks_.at(i); }
  /// Indices of trunk blocks (everything but opening and classifier).
  std::vector<std::size_t> trunk_indices() const;
  ActQuantizer& input_quant() { return *in_q_; }

  /// FNV-1a hash of the canonical BlockSpec list.
  std::uint64_t fingerprint() const { return fingerprint_; }
  static std::uint64_t fingerprint_of(const std::vector<BlockSpec>& specs);

  void set_graph(std::shared_ptr<const GraphOperator> graph) { graph_ = std::move(graph); }
  const GraphOperator* graph() const { return graph_.get(); }
  bool is_graph_network() const;

  /// Logits. When `trace` is given, every trunk block output is recorded.
  Var forward(const Var& x, const ForwardContext& ctx, ActivationTrace* trace = nullptr);
  /// Output of the trunk (input to the classifier).
  Var trunk_forward(const Var& x, const ForwardContext& ctx, ActivationTrace* trace = nullptr);
  /// Runs the trunk blocks only, starting from trunk input `x0` (already
  /// opened and quantized). Used by perturbation experiments.
  Var trunk_from(const Var& x0, const ForwardContext& ctx, ActivationTrace* trace = nullptr);

  std::vector<Parameter> parameters() const;
  /// Convolution kernels of the trunk blocks, in forward order.
  std::vector<Kernel*> kernels();
  /// Every activation quantizer, trunk input first.
  std::vector<ActQuantizer*> quantizers();
  /// Parameters of the trunk blocks only (learnable values counted elementwise).
  std::int64_t trunk_parameter_count() const;
  std::int64_t parameter_count() const;
  int trunk_kernel_count() const;

  /// Shapes at the input of each block for a given network input shape.
  std::vector<Shape> block_input_shapes(const Shape& input) const;
  std::vector<BlockStepInfo> step_infos(const Shape& input, const ForwardContext& ctx) const;

 private:
  Network() = default;
  ForwardContext with_graph(const ForwardContext& ctx) const;

  std::vector<BlockSpec> specs_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::unique_ptr<ActQuantizer> in_q_;
  std::shared_ptr<const GraphOperator> graph_;
  std::uint64_t fingerprint_ = 0;
};

std::string canonical_spec_string(const BlockSpec& spec);

}  // namespace sqnt
