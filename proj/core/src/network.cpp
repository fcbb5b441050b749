#include "sqnt/network.hpp"

#include <cstdio>
#include <random>
#include <sstream>

namespace sqnt {

std::unique_ptr<Block> make_block(const BlockSpec& spec, const std::string& prefix,
                                  std::mt19937_64& rng) {
  spec.validate();
  switch (spec.kind) {
    case BlockKind::opening:
      return std::make_unique<OpeningBlock>(spec, prefix, rng);
    case BlockKind::plain_res:
      return std::make_unique<PlainResBlock>(spec, prefix, rng);
    case BlockKind::sym_res:
      return std::make_unique<SymResBlock>(spec, prefix, rng);
    case BlockKind::plain_mobile:
      return std::make_unique<PlainMobileBlock>(spec, prefix, rng);
    case BlockKind::sym_mobile:
      return std::make_unique<SymMobileBlock>(spec, prefix, rng);
    case BlockKind::channel_change:
      return std::make_unique<ChannelChangeBlock>(spec, prefix, rng);
    case BlockKind::avg_pool:
      return std::make_unique<AvgPoolBlock>(spec, prefix);
    case BlockKind::tv:
      return std::make_unique<TvBlock>(spec, prefix);
    case BlockKind::classifier:
      return std::make_unique<ClassifierBlock>(spec, prefix, rng);
    case BlockKind::gcn_sym:
    case BlockKind::gcn_nonsym:
      return std::make_unique<GcnBlock>(spec, prefix, rng);
  }
  throw std::invalid_argument("make_block: unknown kind");
}

std::string canonical_spec_string(const BlockSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(s.kind) << ' ' << s.channels_in << ' ' << s.channels_out << ' ' << s.kernel_size
     << ' ' << s.h << ' ' << s.quant_weights << s.quant_activations << ' '
     << (s.tv_gamma ? 1 : 0) << ' ' << s.tv_eps << ' ' << s.stride << ' ' << to_string(s.update)
     << ' ' << s.expansion << ' ' << s.node_level;
  return os.str();
}

std::uint64_t Network::fingerprint_of(const std::vector<BlockSpec>& specs) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : specs) {
    for (unsigned char c : canonical_spec_string(s) + ";") {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Network Network::build(std::vector<BlockSpec> specs, std::uint64_t seed) {
  if (specs.size() < 2) throw BuildError(specs.size(), "need at least an opening and a classifier");
  Network net;
  std::mt19937_64 rng(seed);
  int channels = 0;
  const std::size_t last = specs.size() - 1;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    BlockSpec& s = specs[i];
    const bool first = i == 0;
    if (first != (s.kind == BlockKind::opening)) {
      throw BuildError(i, first ? "the first block must be an opening layer"
                                : "opening layers may only appear first");
    }
    if ((i == last) != (s.kind == BlockKind::classifier)) {
      throw BuildError(i, i == last ? "the last block must be a classifier"
                                    : "classifiers may only appear last");
    }
    if (s.kind == BlockKind::avg_pool || s.kind == BlockKind::tv) {
      s.channels_in = s.channels_out = channels;
    }
    if (!first && s.channels_in != channels) {
      throw BuildError(i, std::string(to_string(s.kind)) + " expects " +
                              std::to_string(s.channels_in) + " input channels but receives " +
                              std::to_string(channels));
    }
    try {
      net.blocks_.push_back(make_block(s, "b" + std::to_string(i), rng));
    } catch (const BuildError&) {
      throw;
    } catch (const std::exception& e) {
      throw BuildError(i, e.what());
    }
    channels = s.channels_out;
  }
  net.in_q_ = std::make_unique<ActQuantizer>("in", Signedness::Signed);
  net.fingerprint_ = fingerprint_of(specs);
  net.specs_ = std::move(specs);
  return net;
}

std::vector<std::size_t> Network::trunk_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 1; i + 1 < blocks_.size(); ++i) idx.push_back(i);
  return idx;
}

bool Network::is_graph_network() const {
  for (const auto& s : specs_)
    if (is_graph_kind(s.kind) || s.node_level) return true;
  return false;
}

ForwardContext Network::with_graph(const ForwardContext& ctx) const {
  ForwardContext c = ctx;
  if (!c.graph) c.graph = graph_.get();
  return c;
}

Var Network::trunk_from(const Var& x0, const ForwardContext& ctx, ActivationTrace* trace) {
  const ForwardContext c = with_graph(ctx);
  Var x = x0;
  for (std::size_t i = 1; i + 1 < blocks_.size(); ++i) {
    x = blocks_[i]->forward(x, c);
    if (trace) trace->push_back({i, specs_[i].kind, x.value()});
    if (c.taps) c.taps->push_back(x);
  }
  return x;
}

Var Network::trunk_forward(const Var& x, const ForwardContext& ctx, ActivationTrace* trace) {
  const ForwardContext c = with_graph(ctx);
  Var opened = blocks_.front()->forward(x, c);
  return trunk_from(in_q_->apply(opened, c), c, trace);
}

Var Network::forward(const Var& x, const ForwardContext& ctx, ActivationTrace* trace) {
  const ForwardContext c = with_graph(ctx);
  return blocks_.back()->forward(trunk_forward(x, c, trace), c);
}

std::vector<Parameter> Network::parameters() const {
  std::vector<Parameter> out;
  blocks_.front()->collect(out);
  in_q_->collect(out);
  for (std::size_t i = 1; i < blocks_.size(); ++i) blocks_[i]->collect(out);
  return out;
}

std::vector<ActQuantizer*> Network::quantizers() {
  std::vector<ActQuantizer*> out{in_q_.get()};
  for (auto& b : blocks_) b->quantizers(out);
  return out;
}

std::vector<Kernel*> Network::kernels() {
  std::vector<Kernel*> out;
  for (std::size_t i = 0; i < size(); ++i) {
    Block& b = block(i);
    ResidualBlock* rb = dynamic_cast<ResidualBlock*>(&b);
    if (auto* cc = dynamic_cast<ChannelChangeBlock*>(&b)) rb = &cc->inner();
    if (auto* p = dynamic_cast<PlainResBlock*>(rb)) {
      out.push_back(&p->k1());
      out.push_back(&p->k2());
    } else if (auto* s = dynamic_cast<SymResBlock*>(rb)) {
      out.push_back(&s->kernel());
    } else if (auto* pm = dynamic_cast<PlainMobileBlock*>(rb)) {
      out.push_back(&pm->k1());
      out.push_back(&pm->k2());
      out.push_back(&pm->k3());
    } else if (auto* sm = dynamic_cast<SymMobileBlock*>(rb)) {
      out.push_back(&sm->k1());
      out.push_back(&sm->k2());
    } else if (auto* g = dynamic_cast<GcnBlock*>(rb)) {
      out.push_back(&g->k1());
      if (!g->symmetric()) out.push_back(&g->k2());
    }
  }
  return out;
}

std::int64_t Network::trunk_parameter_count() const {
  std::vector<Parameter> ps;
  for (std::size_t i : trunk_indices()) blocks_[i]->collect(ps);
  std::int64_t n = 0;
  for (const auto& p : ps) n += p.var.value().numel();
  return n;
}

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.var.value().numel();
  return n;
}

int Network::trunk_kernel_count() const {
  int n = 0;
  for (std::size_t i : trunk_indices()) n += blocks_[i]->kernel_count();
  return n;
}

std::vector<Shape> Network::block_input_shapes(const Shape& input) const {
  std::vector<Shape> shapes;
  Shape s = input;
  for (const auto& b : blocks_) {
    shapes.push_back(s);
    s = b->output_shape(s);
  }
  return shapes;
}

std::vector<BlockStepInfo> Network::step_infos(const Shape& input, const ForwardContext& ctx) const {
  const ForwardContext c = with_graph(ctx);
  const auto shapes = block_input_shapes(input);
  std::vector<BlockStepInfo> out;
  for (std::size_t i : trunk_indices()) {
    Shape in = shapes[i];
    in[0] = 1;  // operator norms are per example
    out.push_back({i, specs_[i].kind, blocks_[i]->step_info(in, c)});
  }
  return out;
}

}  // namespace sqnt
