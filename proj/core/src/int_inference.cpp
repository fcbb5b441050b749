#include "sqnt/int_inference.hpp"

#include <cmath>
#include <limits>

#include "sqnt/ops.hpp"

namespace sqnt {

namespace {

constexpr std::int64_t kAccMax = std::numeric_limits<std::int32_t>::max();
constexpr std::int64_t kAccMin = std::numeric_limits<std::int32_t>::min();

void accumulate(std::int64_t& acc, std::int64_t a, std::int64_t b, const char* what) {
  acc += a * b;
  if (acc > kAccMax || acc < kAccMin) {
    throw AccumulatorOverflow(std::string(what) + ": int32 accumulator overflow");
  }
}

struct IntGeom {
  std::int64_t n, c, h, w, co, cg, cog, kh, kw, ph, pw;
};

IntGeom int_geom(const Shape& x, const Shape& k, int groups, bool transpose) {
  const char* what = transpose ? "int_conv2d_transpose" : "int_conv2d";
  if (x.size() != 4 || k.size() != 4) throw ShapeError(std::string(what) + ": rank-4 tensors expected");
  if (groups < 1 || k[0] % groups != 0) throw ShapeError(std::string(what) + ": bad group count");
  if (k[2] % 2 == 0 || k[3] % 2 == 0) throw ShapeError(std::string(what) + ": odd kernel extents expected");
  IntGeom g{};
  g.n = x[0];
  g.h = x[2];
  g.w = x[3];
  g.co = k[0];
  g.cg = k[1];
  g.c = g.cg * groups;
  g.cog = g.co / groups;
  g.kh = k[2];
  g.kw = k[3];
  g.ph = (g.kh - 1) / 2;
  g.pw = (g.kw - 1) / 2;
  const auto channels = transpose ? g.co : g.c;
  if (x[1] != channels) {
    throw ShapeError(std::string(what) + ": input " + shape_str(x) + " does not match kernel " + shape_str(k));
  }
  return g;
}

}  // namespace

IntTensor int_conv2d(const IntTensor& x, const IntTensor& k, int groups) {
  const IntGeom g = int_geom(x.shape, k.shape, groups, false);
  IntTensor y{{g.n, g.co, g.h, g.w}, {}};
  y.values.resize(static_cast<std::size_t>(shape_numel(y.shape)));
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t o = 0; o < g.co; ++o) {
      const std::int64_t grp = o / g.cog;
      for (std::int64_t oh = 0; oh < g.h; ++oh)
        for (std::int64_t ow = 0; ow < g.w; ++ow) {
          std::int64_t acc = 0;
          for (std::int64_t cl = 0; cl < g.cg; ++cl) {
            const std::int64_t c = grp * g.cg + cl;
            for (std::int64_t i = 0; i < g.kh; ++i) {
              const std::int64_t ih = oh + i - g.ph;
              if (ih < 0 || ih >= g.h) continue;
              for (std::int64_t j = 0; j < g.kw; ++j) {
                const std::int64_t iw = ow + j - g.pw;
                if (iw < 0 || iw >= g.w) continue;
                accumulate(acc, x.values[static_cast<std::size_t>(((n * g.c + c) * g.h + ih) * g.w + iw)],
                           k.values[static_cast<std::size_t>(((o * g.cg + cl) * g.kh + i) * g.kw + j)],
                           "int_conv2d");
              }
            }
          }
          y.values[static_cast<std::size_t>(((n * g.co + o) * g.h + oh) * g.w + ow)] =
              static_cast<std::int32_t>(acc);
        }
    }
  return y;
}

IntTensor int_conv2d_transpose(const IntTensor& y, const IntTensor& k, int groups) {
  const IntGeom g = int_geom(y.shape, k.shape, groups, true);
  IntTensor x{{g.n, g.c, g.h, g.w}, {}};
  x.values.resize(static_cast<std::size_t>(shape_numel(x.shape)));
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t c = 0; c < g.c; ++c) {
      const std::int64_t grp = c / g.cg, cl = c % g.cg;
      for (std::int64_t ih = 0; ih < g.h; ++ih)
        for (std::int64_t iw = 0; iw < g.w; ++iw) {
          std::int64_t acc = 0;
          for (std::int64_t o = grp * g.cog; o < (grp + 1) * g.cog; ++o)
            for (std::int64_t i = 0; i < g.kh; ++i) {
              const std::int64_t oh = ih - i + g.ph;
              if (oh < 0 || oh >= g.h) continue;
              for (std::int64_t j = 0; j < g.kw; ++j) {
                const std::int64_t ow = iw - j + g.pw;
                if (ow < 0 || ow >= g.w) continue;
                accumulate(acc, y.values[static_cast<std::size_t>(((n * g.co + o) * g.h + oh) * g.w + ow)],
                           k.values[static_cast<std::size_t>(((o * g.cg + cl) * g.kh + i) * g.kw + j)],
                           "int_conv2d_transpose");
              }
            }
          x.values[static_cast<std::size_t>(((n * g.c + c) * g.h + ih) * g.w + iw)] =
              static_cast<std::int32_t>(acc);
        }
    }
  return x;
}

IntTensor int_sum_pool2(const IntTensor& x) {
  if (x.shape.size() != 4) throw ShapeError("int_sum_pool2: rank-4 input expected");
  const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const auto ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("int_sum_pool2: input smaller than the 2x2 window");
  IntTensor y{{n, c, ho, wo}, {}};
  y.values.resize(static_cast<std::size_t>(n * c * ho * wo));
  auto at = [&](std::int64_t p, std::int64_t i, std::int64_t j) {
    return static_cast<std::int64_t>(x.values[static_cast<std::size_t>((p * h + i) * w + j)]);
  };
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        std::int64_t acc = 0;
        accumulate(acc, at(p, 2 * i, 2 * j), 1, "int_sum_pool2");
        accumulate(acc, at(p, 2 * i, 2 * j + 1), 1, "int_sum_pool2");
        accumulate(acc, at(p, 2 * i + 1, 2 * j), 1, "int_sum_pool2");
        accumulate(acc, at(p, 2 * i + 1, 2 * j + 1), 1, "int_sum_pool2");
        y.values[static_cast<std::size_t>((p * ho + i) * wo + j)] = static_cast<std::int32_t>(acc);
      }
  return y;
}

// ---------------------------------------------------------------------------

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Activation during integer inference: real values, plus grid indices when
// the value came out of a quantizer.
struct Act {
  Tensor real;
  IntTensor ints;
  double step = 0.0;
  bool on_grid = false;
};

Act quantize_site(const Tensor& v, const QuantParams& p, const std::string& site, QuantSiteLog* log) {
  Act a;
  a.real = Tensor(v.shape());
  a.ints.shape = v.shape();
  a.ints.values.resize(static_cast<std::size_t>(v.numel()));
  a.step = p.step();
  a.on_grid = true;
  for (std::int64_t i = 0; i < v.numel(); ++i) {
    const std::int64_t n = quantize_index(v[i], p);
    a.ints.values[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(n);
    a.real[i] = dequantize_index(n, p);
  }
  if (log) {
    Grid g;
    g.ints = Tensor(v.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) g.ints[i] = a.ints.values[static_cast<std::size_t>(i)];
    g.step = a.step;
    log->record(site, g);
  }
  return a;
}

Tensor rescale(const IntTensor& acc, double s) {
  Tensor v(acc.shape);
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<double>(acc.values[static_cast<std::size_t>(i)]) * s;
  return v;
}

int groups_for(const Shape& x, const Shape& k) { return conv_spec_for(x, k).groups; }

void require_grid(const Act& x, const std::string& where) {
  if (!x.on_grid) throw FormatError(where + ": input is not quantized; integer inference needs every stage on a grid");
}

Tensor conv_q(const Act& x, const IntKernel& k, const std::string& where) {
  require_grid(x, where);
  const IntTensor acc = int_conv2d(x.ints, k.q, groups_for(x.ints.shape, k.q.shape));
  const double s = x.step * k.step;
  return rescale(acc, s);
}

Tensor conv_t_q(const Act& y, const IntKernel& k, const Shape& x_shape, const std::string& where) {
  require_grid(y, where);
  const IntTensor acc = int_conv2d_transpose(y.ints, k.q, groups_for(x_shape, k.q.shape));
  const double s = y.step * k.step;
  return rescale(acc, s);
}

IntKernel transposed_1x1(const IntKernel& k) {
  const auto co = k.q.shape[0], ci = k.q.shape[1];
  IntKernel t;
  t.step = k.step;
  t.q.shape = {ci, co, 1, 1};
  t.q.values.resize(k.q.values.size());
  for (std::int64_t i = 0; i < co; ++i)
    for (std::int64_t j = 0; j < ci; ++j)
      t.q.values[static_cast<std::size_t>(j * co + i)] = k.q.values[static_cast<std::size_t>(i * ci + j)];
  return t;
}

// x + h u  /  x - h u, written like the float ops: scale first, then combine.
Tensor combine(const Tensor& x, const Tensor& u, double h, bool subtract) {
  Tensor v = x;
  for (std::int64_t i = 0; i < v.numel(); ++i) {
    const double hu = h * u[i];
    if (subtract) v[i] -= hu;
    else v[i] += hu;
  }
  return v;
}

}  // namespace

IntModel IntModel::from_checkpoint(const RecordFile& ckpt, std::optional<int> bits_w,
                                   std::optional<int> bits_a) {
  LoadedCheckpoint lc = load_checkpoint(ckpt);
  Network& net = lc.net;
  IntModel m;
  m.specs_ = net.specs();
  m.fingerprint_ = net.fingerprint();
  m.bits_w_ = bits_w.value_or(lc.meta.bits_w);
  m.bits_a_ = bits_a.value_or(lc.meta.bits_a);
  if (m.bits_w_ < 2 || m.bits_w_ >= 32 || m.bits_a_ < 2 || m.bits_a_ >= 32) {
    throw FormatError("integer export needs weight and activation widths in [2, 31], got W" +
                      std::to_string(m.bits_w_) + "/A" + std::to_string(m.bits_a_));
  }
  if (lc.meta.bits_w >= 32) {
    throw FormatError("checkpoint was trained without weight quantization; nothing to export");
  }
  for (std::size_t i : net.trunk_indices()) {
    const BlockSpec& s = m.specs_[i];
    const bool has_kernels = is_residual_kind(s.kind) || s.kind == BlockKind::channel_change;
    if (!s.quant_activations || (has_kernels && !s.quant_weights)) {
      throw FormatError("block " + std::to_string(i) + " (" + std::string(to_string(s.kind)) +
                        ") is not fully quantized and cannot run on integers");
    }
  }
  for (ActQuantizer* q : net.quantizers()) {
    if (!q->initialized()) {
      throw FormatError("activation quantizer " + q->name() + " has no calibrated scale");
    }
    m.reals_[q->name() + ".alpha"] = q->alpha().value();
  }
  for (Kernel* k : net.kernels()) {
    const std::string rec = k->name() + ".wq";
    if (!ckpt.contains(rec)) throw FormatError("checkpoint has no quantized weights for " + k->name());
    const QuantParams p = k->weight_params(m.bits_w_);
    IntKernel ik;
    try {
      const QuantizedTensor q = to_integer(ckpt.tensor(rec), p);
      ik.q = {q.shape, q.values};
    } catch (const OffGridError& e) {
      throw OffGridError("kernel " + k->name() + " at " + std::to_string(m.bits_w_) + " bits: " + e.what());
    }
    ik.step = p.step() * k->gain().value()[0];
    m.kernels_[k->name()] = std::move(ik);
  }
  const std::string last = "b" + std::to_string(m.specs_.size() - 1);
  for (const auto& p : net.parameters()) {
    const bool keep = p.role == ParamRole::tv_gamma || p.role == ParamRole::bias ||
                      p.name == "b0.k.w" || p.name == last + ".w";
    if (keep) m.reals_[p.name] = p.var.value();
  }
  if (ckpt.contains("meta.graph_normalized")) {
    m.graph_normalized_ = ckpt.scalar("meta.graph_normalized") != 0.0;
  }
  if (ckpt.contains("meta.config")) m.config_text_ = ckpt.text("meta.config");
  m.arch_ = ckpt.tensor("arch");
  return m;
}

RecordFile IntModel::to_records() const {
  RecordFile f;
  f.fingerprint = fingerprint_;
  f.put("arch", arch_);
  f.put_scalar("int.version", 1);
  f.put_scalar("int.bits_w", bits_w_);
  f.put_scalar("int.bits_a", bits_a_);
  if (graph_normalized_) f.put_scalar("meta.graph_normalized", *graph_normalized_ ? 1.0 : 0.0);
  if (!config_text_.empty()) f.put_text("meta.config", config_text_);
  for (const auto& [name, k] : kernels_) {
    f.put_ints(name + ".q", k.q.shape, k.q.values);
    f.put_scalar(name + ".step", k.step);
  }
  for (const auto& [name, t] : reals_) f.put(name, t);
  return f;
}

IntModel IntModel::from_records(const RecordFile& f) {
  if (!f.contains("int.version")) throw FormatError("not an integer model file");
  IntModel m;
  m.arch_ = f.tensor("arch");
  m.specs_ = decode_architecture(f);
  m.fingerprint_ = f.fingerprint;
  if (Network::fingerprint_of(m.specs_) != m.fingerprint_) {
    throw FormatError("integer model architecture does not match its fingerprint");
  }
  m.bits_w_ = static_cast<int>(f.scalar("int.bits_w"));
  m.bits_a_ = static_cast<int>(f.scalar("int.bits_a"));
  if (f.contains("meta.graph_normalized")) m.graph_normalized_ = f.scalar("meta.graph_normalized") != 0.0;
  if (f.contains("meta.config")) m.config_text_ = f.text("meta.config");
  for (const auto& r : f.records()) {
    if (r.name == "arch" || r.name.starts_with("int.") || r.name.starts_with("meta.")) continue;
    if (r.dtype == DType::i32 && ends_with(r.name, ".q")) {
      const std::string base = r.name.substr(0, r.name.size() - 2);
      IntKernel& k = m.kernels_[base];
      k.q = {r.dims, r.ints};
      k.step = f.scalar(base + ".step");
    } else if (ends_with(r.name, ".step") && f.contains(r.name.substr(0, r.name.size() - 5) + ".q")) {
      continue;
    } else {
      m.reals_[r.name] = f.tensor(r.name);
    }
  }
  return m;
}

bool IntModel::is_graph_model() const {
  for (const auto& s : specs_)
    if (is_graph_kind(s.kind) || s.node_level) return true;
  return false;
}

const Tensor& IntModel::real(const std::string& name) const {
  const auto it = reals_.find(name);
  if (it == reals_.end()) throw FormatError("integer model has no record " + name);
  return it->second;
}

double IntModel::real_scalar(const std::string& name) const { return real(name).item(); }

const IntKernel& IntModel::kernel(const std::string& name) const {
  const auto it = kernels_.find(name);
  if (it == kernels_.end()) throw FormatError("integer model has no kernel " + name);
  return it->second;
}

Tensor IntModel::forward(const Tensor& input, const GraphOperator* graph, QuantSiteLog* sites) const {
  auto params = [&](const std::string& site, Signedness sign) {
    return QuantParams{bits_a_, sign, real_scalar(site + ".alpha"), true};
  };
  auto quant = [&](const Tensor& v, const std::string& site, Signedness sign) {
    return quantize_site(v, params(site, sign), site, sites);
  };

  // Residual update before the outer quantizer.
  auto residual = [&](BlockKind kind, const BlockSpec& spec, const std::string& prefix, const Act& x) {
    auto activate = [&](const Tensor& v) {
      if (spec.tv_gamma) {
        const Var g = Var::constant(real(prefix + ".gamma"));
        return relu(tv_smooth(Var::constant(v), g, spec.tv_eps)).value();
      }
      return relu(Var::constant(v)).value();
    };
    const auto K = [&](const char* s) -> const IntKernel& { return kernel(prefix + "." + s); };
    const Shape& xs = x.real.shape();
    const double h = spec.h;
    switch (kind) {
      case BlockKind::sym_res: {
        const Act r = quant(activate(conv_q(x, K("k"), prefix)), prefix + ".act", Signedness::Unsigned);
        return combine(x.real, conv_t_q(r, K("k"), xs, prefix), h, true);
      }
      case BlockKind::plain_res: {
        const Act r = quant(activate(conv_q(x, K("k2"), prefix)), prefix + ".act", Signedness::Unsigned);
        return combine(x.real, conv_q(r, K("k1"), prefix), h, false);
      }
      case BlockKind::plain_mobile: {
        const Act r1 = quant(activate(conv_q(x, K("k1"), prefix)), prefix + ".act", Signedness::Unsigned);
        const Act r2 = quant(activate(conv_q(r1, K("k2"), prefix)), prefix + ".act2", Signedness::Unsigned);
        return combine(x.real, conv_q(r2, K("k3"), prefix), h, false);
      }
      case BlockKind::sym_mobile: {
        const Act z = quant(conv_q(x, K("k1"), prefix), prefix + ".mid", Signedness::Signed);
        const Act r = quant(activate(conv_q(z, K("k2"), prefix)), prefix + ".act", Signedness::Unsigned);
        const Act t = quant(conv_t_q(r, K("k2"), z.real.shape(), prefix), prefix + ".mid2", Signedness::Signed);
        return combine(x.real, conv_t_q(t, K("k1"), xs, prefix), h, true);
      }
      case BlockKind::gcn_sym:
      case BlockKind::gcn_nonsym: {
        if (!graph) throw std::invalid_argument("graph model needs a graph operator");
        const Act z = quant(graph->apply(x.real), prefix + ".mid", Signedness::Signed);
        const Act r = quant(relu(Var::constant(conv_q(z, K("k1"), prefix))).value(), prefix + ".act",
                            Signedness::Unsigned);
        const IntKernel k2 = kind == BlockKind::gcn_sym ? transposed_1x1(K("k1")) : K("k2");
        const Tensor c = conv_q(r, k2, prefix);
        return combine(x.real, graph->apply_transpose(c), h, true);
      }
      default:
        throw FormatError(prefix + ": not a residual block");
    }
  };

  const std::size_t last = specs_.size() - 1;
  Act x;
  {
    const Tensor& w = real("b0.k.w");
    const Tensor opened = relu(conv2d(Var::constant(input), Var::constant(w),
                                      conv_spec_for(input.shape(), w.shape())))
                              .value();
    x = quant(opened, "in", Signedness::Signed);
  }
  for (std::size_t i = 1; i < last; ++i) {
    const BlockSpec& s = specs_[i];
    const std::string prefix = "b" + std::to_string(i);
    switch (s.kind) {
      case BlockKind::plain_res:
      case BlockKind::sym_res:
      case BlockKind::plain_mobile:
      case BlockKind::sym_mobile:
        x = quant(residual(s.kind, s, prefix, x), prefix + ".out", Signedness::Signed);
        break;
      case BlockKind::gcn_sym:
      case BlockKind::gcn_nonsym: {
        Act next;
        next.real = residual(s.kind, s, prefix, x);
        x = std::move(next);
        break;
      }
      case BlockKind::channel_change: {
        const Tensor u = residual(s.update, s, prefix + ".step", x);
        Tensor y = u;
        const auto extra = s.channels_out - s.channels_in;
        if (extra > 0) {
          y = concat_channels(Var::constant(u), slice_channels(Var::constant(x.real), 0, extra)).value();
        }
        x = quant(y, prefix + ".out", Signedness::Signed);
        break;
      }
      case BlockKind::avg_pool: {
        require_grid(x, prefix);
        const double s4 = 0.25 * x.step;
        x = quant(rescale(int_sum_pool2(x.ints), s4), prefix + ".out", Signedness::Signed);
        break;
      }
      case BlockKind::tv: {
        const Var g = Var::constant(real(prefix + ".gamma"));
        x = quant(tv_smooth(Var::constant(x.real), g, s.tv_eps).value(), prefix + ".out", Signedness::Signed);
        break;
      }
      default:
        throw FormatError(prefix + ": unexpected block in the trunk");
    }
  }
  const std::string cls = "b" + std::to_string(last);
  const Var w = Var::constant(real(cls + ".w"));
  const Var b = Var::constant(real(cls + ".b"));
  const Var xv = Var::constant(x.real);
  return (specs_[last].node_level ? linear(nodes_to_rows(xv), w, b) : classifier_forward(xv, w, b)).value();
}

std::int64_t count_site_mismatches(const QuantSiteLog& a, const QuantSiteLog& b) {
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  std::int64_t bad = 0;
  const std::size_t n = std::min(ea.size(), eb.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = ea[i];
    const auto& y = eb[i];
    if (x.site != y.site || x.ints.shape() != y.ints.shape() || x.step != y.step) {
      bad += std::max(x.ints.numel(), y.ints.numel());
      continue;
    }
    for (std::int64_t j = 0; j < x.ints.numel(); ++j)
      if (x.ints[j] != y.ints[j]) ++bad;
  }
  for (std::size_t i = n; i < ea.size(); ++i) bad += ea[i].ints.numel();
  for (std::size_t i = n; i < eb.size(); ++i) bad += eb[i].ints.numel();
  return bad;
}

}  // namespace sqnt
