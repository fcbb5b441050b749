#include "sqnt/graph.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sqnt {

Graph::Graph(std::int64_t num_nodes, std::vector<std::pair<std::int64_t, std::int64_t>> edges)
    : n_(num_nodes), edges_(std::move(edges)) {
  if (n_ <= 0) throw std::invalid_argument("graph needs at least one node");
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    auto [u, v] = edges_[e];
    const std::string where = "edge " + std::to_string(e) + " (" + std::to_string(u) + ", " +
                              std::to_string(v) + ")";
    if (u < 0 || v < 0 || u >= n_ || v >= n_) {
      throw std::invalid_argument(where + " references a node outside [0, " +
                                  std::to_string(n_) + ")");
    }
    if (u == v) throw std::invalid_argument(where + " is a self-loop");
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) {
      throw std::invalid_argument(where + " is a duplicate");
    }
  }
}

std::vector<std::int64_t> Graph::degrees() const {
  std::vector<std::int64_t> d(static_cast<std::size_t>(n_), 0);
  for (auto [u, v] : edges_) {
    ++d[static_cast<std::size_t>(u)];
    ++d[static_cast<std::size_t>(v)];
  }
  return d;
}

int Graph::connected_components() const {
  std::vector<std::int64_t> parent(static_cast<std::size_t>(n_));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::int64_t a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      auto& p = parent[static_cast<std::size_t>(a)];
      p = parent[static_cast<std::size_t>(p)];
      a = p;
    }
    return a;
  };
  int count = static_cast<int>(n_);
  for (auto [u, v] : edges_) {
    const auto a = find(u), b = find(v);
    if (a != b) {
      parent[static_cast<std::size_t>(a)] = b;
      --count;
    }
  }
  return count;
}

Graph read_edge_list(std::istream& in, std::int64_t num_nodes) {
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  std::int64_t max_index = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::int64_t u = 0, v = 0;
    if (!(ls >> u)) continue;
    std::string rest;
    if (!(ls >> v) || (ls >> rest)) {
      throw std::invalid_argument("edge list line " + std::to_string(line_no) +
                                  ": expected 'u v'");
    }
    edges.emplace_back(u, v);
    max_index = std::max({max_index, u, v});
  }
  return Graph(num_nodes > 0 ? num_nodes : max_index + 1, std::move(edges));
}

Graph read_edge_list_file(const std::string& path, std::int64_t num_nodes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open edge list '" + path + "'");
  return read_edge_list(in, num_nodes);
}

void write_edge_list(std::ostream& out, const Graph& g) {
  for (auto [u, v] : g.edges()) out << u << ' ' << v << '\n';
}

// ---------------------------------------------------------------------------

GraphOperator::GraphOperator(Graph graph, bool normalized, double c)
    : graph_(std::move(graph)), normalized_(normalized) {
  const auto deg = graph_.degrees();
  for (auto [u, v] : graph_.edges()) {
    if (normalized_) {
      cu_.push_back(-c / std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(u)])));
      cv_.push_back(c / std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(v)])));
    } else {
      cu_.push_back(-c);
      cv_.push_back(c);
    }
  }
}

namespace {

void require_layout(const Tensor& t, std::int64_t rows, const char* what) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(3) != 1 || t.dim(2) != rows) {
    throw ShapeError(std::string(what) + ": expected [1,C," + std::to_string(rows) + ",1], got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor GraphOperator::apply(const Tensor& x) const {
  const auto n = num_nodes(), m = num_edges();
  require_layout(x, n, "incidence");
  const auto channels = x.dim(1);
  Tensor y(Shape{1, channels, m, 1});
  const auto& edges = graph_.edges();
  for (std::int64_t c = 0; c < channels; ++c) {
    const double* xc = x.data() + c * n;
    double* yc = y.data() + c * m;
    for (std::int64_t e = 0; e < m; ++e) {
      const auto [u, v] = edges[static_cast<std::size_t>(e)];
      yc[e] = cu_[static_cast<std::size_t>(e)] * xc[u] + cv_[static_cast<std::size_t>(e)] * xc[v];
    }
  }
  return y;
}

Tensor GraphOperator::apply_transpose(const Tensor& y) const {
  const auto n = num_nodes(), m = num_edges();
  require_layout(y, m, "incidence transpose");
  const auto channels = y.dim(1);
  Tensor x(Shape{1, channels, n, 1});
  const auto& edges = graph_.edges();
  // Edges are visited in a fixed order so the reduction is deterministic.
  for (std::int64_t c = 0; c < channels; ++c) {
    const double* yc = y.data() + c * m;
    double* xc = x.data() + c * n;
    for (std::int64_t e = 0; e < m; ++e) {
      const auto [u, v] = edges[static_cast<std::size_t>(e)];
      xc[u] += cu_[static_cast<std::size_t>(e)] * yc[e];
      xc[v] += cv_[static_cast<std::size_t>(e)] * yc[e];
    }
  }
  return x;
}

LinearOperator GraphOperator::as_operator(std::int64_t channels) const {
  LinearOperator op;
  op.in_shape = {1, channels, num_nodes(), 1};
  op.out_shape = {1, channels, num_edges(), 1};
  op.apply = [this](const Tensor& x) { return apply(x); };
  op.apply_transpose = [this](const Tensor& y) { return apply_transpose(y); };
  return op;
}

LinearOperator GraphOperator::as_transpose_operator(std::int64_t channels) const {
  LinearOperator op = as_operator(channels);
  std::swap(op.in_shape, op.out_shape);
  std::swap(op.apply, op.apply_transpose);
  return op;
}

Var incidence_apply(const Var& x, const GraphOperator& s) {
  return make_node("incidence", s.apply(x.value()), {x}, [&s](Node& self) {
    self.inputs[0]->accumulate(s.apply_transpose(self.grad));
  });
}

Var incidence_apply_transpose(const Var& y, const GraphOperator& s) {
  return make_node("incidence_transpose", s.apply_transpose(y.value()), {y}, [&s](Node& self) {
    self.inputs[0]->accumulate(s.apply(self.grad));
  });
}

namespace {

Tensor transpose_01(const Tensor& k) {
  const auto co = k.dim(0), ci = k.dim(1);
  Tensor t(Shape{ci, co, 1, 1});
  for (std::int64_t i = 0; i < co; ++i)
    for (std::int64_t j = 0; j < ci; ++j) t[j * co + i] = k[i * ci + j];
  return t;
}

}  // namespace

Var transpose_kernel(const Var& k) {
  const auto& ks = k.shape();
  if (ks.size() != 4 || ks[2] != 1 || ks[3] != 1) {
    throw ShapeError("transpose_kernel: expected a 1x1 kernel, got " + shape_str(ks));
  }
  Var out = make_node("transpose_kernel", transpose_01(k.value()), {k}, [](Node& self) {
    self.inputs[0]->accumulate(transpose_01(self.grad));
  });
  if (k.grid()) {
    auto grid = std::make_shared<Grid>();
    grid->ints = transpose_01(k.grid()->ints);
    grid->step = k.grid()->step;
    out.node().grid = std::move(grid);
  }
  return out;
}

namespace {

Var hook(const std::function<Var(const Var&)>& f, const Var& v) { return f ? f(v) : v; }

void require_node_features(const Var& x, const GraphOperator& s, const Var& k1, const Var& k2) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[0] != 1 || xs[3] != 1 || xs[2] != s.num_nodes()) {
    throw ShapeError("gcn: node features must be [1,C," + std::to_string(s.num_nodes()) +
                     ",1], got " + shape_str(xs));
  }
  const auto& a = k1.shape();
  const auto& b = k2.shape();
  if (a.size() != 4 || b.size() != 4 || a[1] != xs[1] || b[1] != a[0] || b[0] != xs[1] ||
      a[2] != 1 || a[3] != 1 || b[2] != 1 || b[3] != 1) {
    throw ShapeError("gcn: kernels " + shape_str(a) + ", " + shape_str(b) +
                     " do not match feature width " + std::to_string(xs[1]));
  }
}

}  // namespace

Var gcn_nonsym_forward(const Var& x, const GraphOperator& s, const Var& k1, const Var& k2,
                       double h, const StepHooks& q) {
  require_node_features(x, s, k1, k2);
  Var z = hook(q.mid, incidence_apply(x, s));
  Var a = conv2d(z, k1);
  Var r = hook(q.act, q.activation ? q.activation(a) : relu(a));
  Var c = conv2d(r, k2);
  return sub(x, scale(incidence_apply_transpose(c, s), h));
}

Var gcn_sym_forward(const Var& x, const GraphOperator& s, const Var& k, double h,
                    const StepHooks& q) {
  return gcn_nonsym_forward(x, s, k, transpose_kernel(k), h, q);
}

// ---------------------------------------------------------------------------

GcnBlock::GcnBlock(const BlockSpec& spec, const std::string& prefix, std::mt19937_64& rng)
    : ResidualBlock(spec),
      k1_(prefix + ".k1", {spec.channels_in, spec.channels_in, 1, 1}, spec.quant_weights, rng),
      k2_(prefix + ".k2", {spec.channels_in, spec.channels_in, 1, 1}, spec.quant_weights, rng) {
  prefix_ = prefix;
  if (spec.quant_activations) {
    mid_q_.emplace(prefix + ".mid", Signedness::Signed);
    act_q_.emplace(prefix + ".act", Signedness::Unsigned);
  }
  use_out_q_ = false;
  if (spec.tv_gamma) throw std::invalid_argument("gcn blocks do not support TV activations");
}

Var GcnBlock::update_sum(const Var& x, const ForwardContext& ctx) {
  if (!ctx.graph) throw std::invalid_argument("gcn block needs a graph operator");
  const StepHooks q = hooks(ctx);
  if (symmetric()) return gcn_sym_forward(x, *ctx.graph, k1_.effective(ctx), spec_.h, q);
  return gcn_nonsym_forward(x, *ctx.graph, k1_.effective(ctx), k2_.effective(ctx), spec_.h, q);
}

void GcnBlock::collect(std::vector<Parameter>& out) const {
  k1_.collect(out);
  if (!symmetric()) k2_.collect(out);
  collect_common(out);
}

std::optional<StepInfo> GcnBlock::step_info(const Shape& in, const ForwardContext& ctx) const {
  if (!ctx.graph) return std::nullopt;
  const auto channels = in.at(1);
  const Shape edge_shape{1, channels, ctx.graph->num_edges(), 1};
  StepInfo s;
  s.h = spec_.h;
  s.symmetric = symmetric();
  s.factors.push_back(
      compose(conv_operator(k1_.effective_value(ctx), edge_shape), ctx.graph->as_operator(channels)));
  if (!symmetric()) {
    s.factors.push_back(compose(ctx.graph->as_transpose_operator(channels),
                                conv_operator(k2_.effective_value(ctx), edge_shape)));
  }
  return s;
}

}  // namespace sqnt
