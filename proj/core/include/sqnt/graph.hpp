#pragma once

// Graphs, the fixed incidence operator S, and diffusive graph layers.
//
// Node features are laid out as [1, C, n, 1] so that 1x1 convolutions mix
// channels per node; S maps them to edge features [1, C, E, 1].

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sqnt/layers.hpp"

namespace sqnt {

/// Undirected simple graph.
class Graph {
 public:
  Graph() = default;
  /// Throws std::invalid_argument on out-of-range nodes, self-loops or
  /// duplicate edges.
  Graph(std::int64_t num_nodes, std::vector<std::pair<std::int64_t, std::int64_t>> edges);

  std::int64_t num_nodes() const { return n_; }
  std::int64_t num_edges() const { return static_cast<std::int64_t>(edges_.size()); }
  const std::vector<std::pair<std::int64_t, std::int64_t>>& edges() const { return edges_; }
  std::vector<std::int64_t> degrees() const;
  int connected_components() const;

 private:
  std::int64_t n_ = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges_;
};

/// Reads "u v" lines (0-based); blank lines and '#' comments are skipped.
/// The node count is num_nodes when positive, else 1 + the largest index.
Graph read_edge_list(std::istream& in, std::int64_t num_nodes = 0);
Graph read_edge_list_file(const std::string& path, std::int64_t num_nodes = 0);
void write_edge_list(std::ostream& out, const Graph& g);

/// Sparse edge-node incidence. Row e = (u, v) holds -c/sqrt(d(u)) at u and
/// +c/sqrt(d(v)) at v (normalized), or -1/+1 (unnormalized).
class GraphOperator {
 public:
  GraphOperator() = default;
  explicit GraphOperator(Graph graph, bool normalized = true, double c = 1.0);

  const Graph& graph() const { return graph_; }
  std::int64_t num_nodes() const { return graph_.num_nodes(); }
  std::int64_t num_edges() const { return graph_.num_edges(); }
  bool normalized() const { return normalized_; }
  /// Coefficients of edge e at its two endpoints.
  double coef_u(std::int64_t e) const { return cu_[static_cast<std::size_t>(e)]; }
  double coef_v(std::int64_t e) const { return cv_[static_cast<std::size_t>(e)]; }

  /// [1,C,n,1] -> [1,C,E,1]
  Tensor apply(const Tensor& x) const;
  /// [1,C,E,1] -> [1,C,n,1]
  Tensor apply_transpose(const Tensor& y) const;

  LinearOperator as_operator(std::int64_t channels) const;
  LinearOperator as_transpose_operator(std::int64_t channels) const;

 private:
  Graph graph_;
  bool normalized_ = true;
  std::vector<double> cu_, cv_;
};

Var incidence_apply(const Var& x, const GraphOperator& s);
Var incidence_apply_transpose(const Var& y, const GraphOperator& s);

/// Transposes the channel axes of a 1x1 kernel [Co,Ci,1,1] -> [Ci,Co,1,1].
/// A grid on k is carried over.
Var transpose_kernel(const Var& k);

/// x - h S^T K^T sigma(K S x). Hooks: `mid` on S x, `act` after sigma.
Var gcn_sym_forward(const Var& x, const GraphOperator& s, const Var& k, double h,
                    const StepHooks& q = {});
/// x - h S^T K2 sigma(K1 S x).
Var gcn_nonsym_forward(const Var& x, const GraphOperator& s, const Var& k1, const Var& k2,
                       double h, const StepHooks& q = {});

/// Diffusive graph step sharing the network's GraphOperator (from the
/// forward context). Quantizers sit before each channel-mixing operator.
class GcnBlock : public ResidualBlock {
 public:
  GcnBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng);
  Var update_sum(const Var& x, const ForwardContext& ctx) override;
  Var forward(const Var& x, const ForwardContext& ctx) override { return update_sum(x, ctx); }
  void collect(std::vector<Parameter>& out) const override;
  int kernel_count() const override { return symmetric() ? 1 : 2; }
  std::optional<StepInfo> step_info(const Shape& in, const ForwardContext& ctx) const override;
  void rescale_step(double factor) override { k1_.rescale(factor); }

  bool symmetric() const { return spec_.kind == BlockKind::gcn_sym; }
  Kernel& k1() { return k1_; }
  /// Second kernel; only meaningful for the non-symmetric variant.
  Kernel& k2() { return k2_; }

 private:
  Kernel k1_, k2_;
};

}  // namespace sqnt
