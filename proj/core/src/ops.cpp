#include "sqnt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sqnt {

namespace {

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

void accumulate_if(Node& n, const Tensor& g) {
  if (n.requires_grad) n.accumulate(g);
}

Tensor map_values(const Tensor& a, auto&& f) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

void require_scalar(const Var& s, const char* what) {
  if (s.value().numel() != 1) throw ShapeError(std::string(what) + ": expected a scalar");
}

bool both_on_grid(const Var& a, const Var& b) { return a.grid() && b.grid(); }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor v = a.value();
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] += b.value()[i];
  return make_node("add", std::move(v), {a, b}, [](Node& self) {
    accumulate_if(input(self, 0), self.grad);
    accumulate_if(input(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor v = a.value();
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] -= b.value()[i];
  return make_node("sub", std::move(v), {a, b}, [](Node& self) {
    accumulate_if(input(self, 0), self.grad);
    if (input(self, 1).requires_grad) {
      input(self, 1).accumulate(map_values(self.grad, [](double g) { return -g; }));
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor v = a.value();
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] *= b.value()[i];
  return make_node("mul", std::move(v), {a, b}, [](Node& self) {
    const Tensor& av = input(self, 0).value;
    const Tensor& bv = input(self, 1).value;
    if (input(self, 0).requires_grad) {
      Tensor g = self.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      input(self, 0).accumulate(g);
    }
    if (input(self, 1).requires_grad) {
      Tensor g = self.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
      input(self, 1).accumulate(g);
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor v = map_values(a.value(), [c](double x) { return c * x; });
  return make_node("scale", std::move(v), {a}, [c](Node& self) {
    input(self, 0).accumulate(map_values(self.grad, [c](double g) { return c * g; }));
  });
}

Var scale_by(const Var& a, const Var& s) {
  require_scalar(s, "scale_by");
  const double c = s.value()[0];
  Tensor v = map_values(a.value(), [c](double x) { return c * x; });
  Var out = make_node("scale_by", std::move(v), {a, s}, [c](Node& self) {
    const Tensor& av = input(self, 0).value;
    if (input(self, 0).requires_grad) {
      input(self, 0).accumulate(map_values(self.grad, [c](double g) { return c * g; }));
    }
    if (input(self, 1).requires_grad) {
      input(self, 1).accumulate(Tensor::scalar(dot(self.grad, av)));
    }
  });
  if (a.grid()) {
    auto grid = std::make_shared<Grid>(*a.grid());
    grid->step = a.grid()->step * c;
    out.node().grid = std::move(grid);
  }
  return out;
}

Var square(const Var& a) {
  Tensor v = map_values(a.value(), [](double x) { return x * x; });
  return make_node("square", std::move(v), {a}, [](Node& self) {
    const Tensor& av = input(self, 0).value;
    Tensor g = self.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= 2.0 * av[i];
    input(self, 0).accumulate(g);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Shape shape = a.shape();
  return make_node("sum", Tensor::scalar(s), {a}, [shape](Node& self) {
    input(self, 0).accumulate(Tensor(shape, self.grad[0]));
  });
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

Var relu(const Var& x) {
  Tensor v = map_values(x.value(), [](double t) { return t > 0.0 || std::isnan(t) ? t : 0.0; });
  return make_node("relu", std::move(v), {x}, [](Node& self) {
    const Tensor& xv = input(self, 0).value;
    Tensor g = self.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (!(xv[i] > 0.0)) g[i] = 0.0;
    input(self, 0).accumulate(g);
  });
}

Var conv2d(const Var& x, const Var& k, const ConvSpec& spec) {
  Tensor value;
  if (both_on_grid(x, k)) {
    value = kernels::conv2d(x.grid()->ints, k.grid()->ints, spec);
    const double s = x.grid()->step * k.grid()->step;
    for (auto& v : value.values()) v = v * s;
  } else {
    value = kernels::conv2d(x.value(), k.value(), spec);
  }
  return make_node("conv2d", std::move(value), {x, k}, [spec](Node& self) {
    const Tensor& xv = input(self, 0).value;
    const Tensor& kv = input(self, 1).value;
    if (input(self, 0).requires_grad) {
      input(self, 0).accumulate(
          kernels::conv2d_transpose(self.grad, kv, spec, xv.dim(2), xv.dim(3)));
    }
    if (input(self, 1).requires_grad) {
      input(self, 1).accumulate(kernels::conv2d_kernel_grad(xv, self.grad, kv.shape(), spec));
    }
  });
}

Var conv2d_transpose(const Var& y, const Var& k, const ConvSpec& spec, std::int64_t in_h,
                     std::int64_t in_w) {
  Tensor value;
  if (both_on_grid(y, k)) {
    value = kernels::conv2d_transpose(y.grid()->ints, k.grid()->ints, spec, in_h, in_w);
    const double s = y.grid()->step * k.grid()->step;
    for (auto& v : value.values()) v = v * s;
  } else {
    value = kernels::conv2d_transpose(y.value(), k.value(), spec, in_h, in_w);
  }
  return make_node("conv2d_transpose", std::move(value), {y, k}, [spec](Node& self) {
    const Tensor& yv = input(self, 0).value;
    const Tensor& kv = input(self, 1).value;
    // out = A^T y with A = conv(., k); d/dy = A g, d/dk = <A x, y> grad with roles swapped.
    if (input(self, 0).requires_grad) {
      input(self, 0).accumulate(kernels::conv2d(self.grad, kv, spec));
    }
    if (input(self, 1).requires_grad) {
      input(self, 1).accumulate(kernels::conv2d_kernel_grad(self.grad, yv, kv.shape(), spec));
    }
  });
}

Var avg_pool2(const Var& x) {
  Tensor value;
  if (x.grid()) {
    value = kernels::sum_pool2(x.grid()->ints);
    const double s = 0.25 * x.grid()->step;
    for (auto& v : value.values()) v = v * s;
  } else {
    value = kernels::avg_pool2(x.value());
  }
  Shape in_shape = x.shape();
  return make_node("avg_pool2", std::move(value), {x}, [in_shape](Node& self) {
    input(self, 0).accumulate(kernels::avg_pool2_transpose(self.grad, in_shape));
  });
}

Var global_avg_pool(const Var& x) {
  Shape in_shape = x.shape();
  return make_node("global_avg_pool", kernels::global_avg_pool(x.value()), {x},
                   [in_shape](Node& self) {
                     input(self, 0).accumulate(
                         kernels::global_avg_pool_transpose(self.grad, in_shape));
                   });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("linear: incompatible shapes " + shape_str(xv.shape()) + " and " +
                     shape_str(wv.shape()));
  }
  const auto n = xv.dim(0), f = xv.dim(1), c = wv.dim(0);
  if (b.value().numel() != c) throw ShapeError("linear: bias size mismatch");
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      double s = b.value()[j];
      for (std::int64_t t = 0; t < f; ++t) s += xv[i * f + t] * wv[j * f + t];
      out[i * c + j] = s;
    }
  Shape bshape = b.shape();
  return make_node("linear", std::move(out), {x, w, b}, [bshape, n, f, c](Node& self) {
    const Tensor& xs = input(self, 0).value;
    const Tensor& ws = input(self, 1).value;
    const Tensor& g = self.grad;
    if (input(self, 0).requires_grad) {
      Tensor gx(Shape{n, f});
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          for (std::int64_t t = 0; t < f; ++t) gx[i * f + t] += g[i * c + j] * ws[j * f + t];
      input(self, 0).accumulate(gx);
    }
    if (input(self, 1).requires_grad) {
      Tensor gw(Shape{c, f});
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          for (std::int64_t t = 0; t < f; ++t) gw[j * f + t] += g[i * c + j] * xs[i * f + t];
      input(self, 1).accumulate(gw);
    }
    if (input(self, 2).requires_grad) {
      Tensor gb(bshape);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      input(self, 2).accumulate(gb);
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: incompatible " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  const auto n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor out(Shape{n, ca + cb, av.dim(2), av.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(bv.data() + i * cb * plane, cb * plane,
                out.data() + (i * (ca + cb) + ca) * plane);
  }
  Shape as = av.shape(), bs = bv.shape();
  return make_node("concat_channels", std::move(out), {a, b},
                   [as, bs, n, ca, cb, plane](Node& self) {
                     Tensor ga(as), gb(bs);
                     for (std::int64_t i = 0; i < n; ++i) {
                       const double* src = self.grad.data() + i * (ca + cb) * plane;
                       std::copy_n(src, ca * plane, ga.data() + i * ca * plane);
                       std::copy_n(src + ca * plane, cb * plane, gb.data() + i * cb * plane);
                     }
                     accumulate_if(input(self, 0), ga);
                     accumulate_if(input(self, 1), gb);
                   });
}

Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || begin < 0 || count <= 0 || begin + count > xv.dim(1)) {
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(xv.shape()));
  }
  const auto n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out(Shape{n, count, xv.dim(2), xv.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(xv.data() + (i * c + begin) * plane, count * plane,
                out.data() + i * count * plane);
  }
  Shape xs = xv.shape();
  return make_node("slice_channels", std::move(out), {x},
                   [xs, begin, count, n, c, plane](Node& self) {
                     Tensor g(xs);
                     for (std::int64_t i = 0; i < n; ++i) {
                       std::copy_n(self.grad.data() + i * count * plane, count * plane,
                                   g.data() + (i * c + begin) * plane);
                     }
                     input(self, 0).accumulate(g);
                   });
}

Var reshape(const Var& x, Shape shape) {
  Tensor v = x.value().reshaped(std::move(shape));
  Shape xs = x.shape();
  return make_node("reshape", std::move(v), {x}, [xs](Node& self) {
    input(self, 0).accumulate(self.grad.reshaped(xs));
  });
}

namespace {

Tensor transpose2(const Tensor& t, std::int64_t rows, std::int64_t cols, Shape out_shape) {
  Tensor out(std::move(out_shape));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[j * rows + i] = t[i * cols + j];
  return out;
}

}  // namespace

Var nodes_to_rows(const Var& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || xv.dim(0) != 1 || xv.dim(3) != 1) {
    throw ShapeError("nodes_to_rows: expected [1,C,n,1], got " + shape_str(xv.shape()));
  }
  const auto c = xv.dim(1), n = xv.dim(2);
  Shape xs = xv.shape();
  return make_node("nodes_to_rows", transpose2(xv, c, n, Shape{n, c}), {x},
                   [xs, c, n](Node& self) {
                     input(self, 0).accumulate(transpose2(self.grad, n, c, xs));
                   });
}

Var rows_to_nodes(const Var& x) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("rows_to_nodes: expected [n,C]");
  const auto n = xv.dim(0), c = xv.dim(1);
  Shape xs = xv.shape();
  return make_node("rows_to_nodes", transpose2(xv, n, c, Shape{1, c, n, 1}), {x},
                   [xs, c, n](Node& self) {
                     input(self, 0).accumulate(transpose2(self.grad, c, n, xs));
                   });
}

Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const std::uint8_t> mask) {
  const auto& z = logits.value();
  if (z.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,C]");
  const auto n = z.dim(0), c = z.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: label count does not match batch");
  }
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n) {
    throw ShapeError("cross_entropy: mask size does not match batch");
  }
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                  " out of range for " + std::to_string(c) + " classes");
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: empty label mask");

  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double se = 0.0;
    for (std::int64_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    for (std::int64_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    if (mask.empty() || mask[i]) loss += lse - row[labels[i]];
  }
  loss /= static_cast<double>(count);

  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_node("cross_entropy", Tensor::scalar(loss), {logits},
                   [probs, lab, msk, n, c, count](Node& self) {
                     Tensor g(probs.shape());
                     const double scale = self.grad[0] / static_cast<double>(count);
                     for (std::int64_t i = 0; i < n; ++i) {
                       if (!msk.empty() && !msk[i]) continue;
                       for (std::int64_t j = 0; j < c; ++j) g[i * c + j] = scale * probs[i * c + j];
                       g[i * c + lab[i]] -= scale;
                     }
                     input(self, 0).accumulate(g);
                   });
}

Var tv_smooth(const Var& x, const Var& gamma, double eps) {
  require_scalar(gamma, "tv_smooth");
  const double gm = gamma.value()[0];
  const double gamma2 = gm * gm;
  Tensor diffusion = kernels::tv_diffusion(x.value(), eps);
  Tensor value = x.value();
  for (std::int64_t i = 0; i < value.numel(); ++i) value[i] -= gamma2 * diffusion[i];
  return make_node("tv_smooth", std::move(value), {x, gamma},
                   [diffusion, gm, gamma2, eps](Node& self) {
                     const Tensor& xv = input(self, 0).value;
                     if (input(self, 0).requires_grad) {
                       input(self, 0).accumulate(
                           kernels::tv_smooth_vjp(xv, self.grad, gamma2, eps));
                     }
                     if (input(self, 1).requires_grad) {
                       input(self, 1).accumulate(
                           Tensor::scalar(-2.0 * gm * dot(self.grad, diffusion)));
                     }
                   });
}

Var tv_norm(const Var& x) {
  return make_node("tv_norm", Tensor::scalar(kernels::tv_norm(x.value())), {x}, [](Node& self) {
    const Tensor& xv = input(self, 0).value;
    Tensor g = kernels::tv_norm_grad(xv);
    for (auto& v : g.values()) v *= self.grad[0];
    input(self, 0).accumulate(g);
  });
}

}  // namespace sqnt
