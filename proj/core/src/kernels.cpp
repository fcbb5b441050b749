#include "sqnt/kernels.hpp"

#include <Eigen/Core>
#include <cmath>

namespace sqnt::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  std::int64_t n, c, h, w;      // input
  std::int64_t co, cg, kh, kw;  // kernel (cg = input channels per group)
  std::int64_t cog;             // output channels per group
  std::int64_t ho, wo;
  std::int64_t ph, pw;
  std::int64_t stride, groups;
  std::int64_t rows() const { return cg * kh * kw; }
  std::int64_t cols() const { return n * ho * wo; }
};

ConvGeom make_geom(const Shape& x, const Shape& k, const ConvSpec& spec) {
  if (x.size() != 4) throw ShapeError("conv2d: input must be rank 4, got " + shape_str(x));
  if (k.size() != 4) throw ShapeError("conv2d: kernel must be rank 4, got " + shape_str(k));
  if (spec.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (spec.groups < 1) throw ShapeError("conv2d: groups must be >= 1");
  ConvGeom g{};
  g.n = x[0];
  g.c = x[1];
  g.h = x[2];
  g.w = x[3];
  g.co = k[0];
  g.cg = k[1];
  g.kh = k[2];
  g.kw = k[3];
  g.groups = spec.groups;
  g.stride = spec.stride;
  if (g.c % g.groups != 0 || g.co % g.groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  if (g.c / g.groups != g.cg) {
    throw ShapeError("conv2d: input has " + std::to_string(g.c) + " channels but kernel " +
                     shape_str(k) + " expects " + std::to_string(g.cg * g.groups));
  }
  g.cog = g.co / g.groups;
  if (spec.padding == Padding::same) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
      throw ShapeError("conv2d: 'same' padding requires odd kernel extents");
    }
    g.ph = (g.kh - 1) / 2;
    g.pw = (g.kw - 1) / 2;
  } else {
    g.ph = 0;
    g.pw = 0;
  }
  const std::int64_t eh = g.h + 2 * g.ph - g.kh;
  const std::int64_t ew = g.w + 2 * g.pw - g.kw;
  if (eh < 0 || ew < 0) throw ShapeError("conv2d: kernel larger than padded input");
  g.ho = eh / g.stride + 1;
  g.wo = ew / g.stride + 1;
  return g;
}

// Column matrix for one group: rows = cg*kh*kw, cols = n*ho*wo.
void im2col(const Tensor& x, const ConvGeom& g, std::int64_t group, RowMat& cols) {
  cols.resize(g.rows(), g.cols());
  const double* xd = x.data();
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t cl = 0; cl < g.cg; ++cl) {
    const std::int64_t c = group * g.cg + cl;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = cols.row((cl * g.kh + i) * g.kw + j).data();
        for (std::int64_t n = 0; n < g.n; ++n) {
          const double* xp = xd + (n * g.c + c) * g.h * g.w;
          double* out = row + n * plane;
          for (std::int64_t oh = 0; oh < g.ho; ++oh) {
            const std::int64_t ih = oh * g.stride + i - g.ph;
            if (ih < 0 || ih >= g.h) {
              for (std::int64_t ow = 0; ow < g.wo; ++ow) out[oh * g.wo + ow] = 0.0;
              continue;
            }
            for (std::int64_t ow = 0; ow < g.wo; ++ow) {
              const std::int64_t iw = ow * g.stride + j - g.pw;
              out[oh * g.wo + ow] = (iw < 0 || iw >= g.w) ? 0.0 : xp[ih * g.w + iw];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, const ConvGeom& g, std::int64_t group, Tensor& x) {
  double* xd = x.data();
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t cl = 0; cl < g.cg; ++cl) {
    const std::int64_t c = group * g.cg + cl;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = cols.row((cl * g.kh + i) * g.kw + j).data();
        for (std::int64_t n = 0; n < g.n; ++n) {
          double* xp = xd + (n * g.c + c) * g.h * g.w;
          const double* in = row + n * plane;
          for (std::int64_t oh = 0; oh < g.ho; ++oh) {
            const std::int64_t ih = oh * g.stride + i - g.ph;
            if (ih < 0 || ih >= g.h) continue;
            for (std::int64_t ow = 0; ow < g.wo; ++ow) {
              const std::int64_t iw = ow * g.stride + j - g.pw;
              if (iw >= 0 && iw < g.w) xp[ih * g.w + iw] += in[oh * g.wo + ow];
            }
          }
        }
      }
    }
  }
}

// Output-channel block of y for one group laid out as [cog, n*ho*wo].
void gather_out(const Tensor& y, const ConvGeom& g, std::int64_t group, RowMat& out) {
  out.resize(g.cog, g.cols());
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t o = 0; o < g.cog; ++o) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      const double* src = y.data() + (n * g.co + group * g.cog + o) * plane;
      std::copy(src, src + plane, out.row(o).data() + n * plane);
    }
  }
}

void scatter_out(const RowMat& out, const ConvGeom& g, std::int64_t group, Tensor& y) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t o = 0; o < g.cog; ++o) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      const double* src = out.row(o).data() + n * plane;
      std::copy(src, src + plane, y.data() + (n * g.co + group * g.cog + o) * plane);
    }
  }
}

Eigen::Map<const RowMat> kernel_block(const Tensor& k, const ConvGeom& g, std::int64_t group) {
  return Eigen::Map<const RowMat>(k.data() + group * g.cog * g.rows(), g.cog, g.rows());
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& k, const ConvSpec& spec) {
  const auto g = make_geom(x, k, spec);
  return {g.n, g.co, g.ho, g.wo};
}

Tensor conv2d(const Tensor& x, const Tensor& k, const ConvSpec& spec) {
  const auto g = make_geom(x.shape(), k.shape(), spec);
  Tensor y(Shape{g.n, g.co, g.ho, g.wo});
  RowMat cols, out;
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    im2col(x, g, grp, cols);
    out.noalias() = kernel_block(k, g, grp) * cols;
    scatter_out(out, g, grp, y);
  }
  return y;
}

Tensor conv2d_transpose(const Tensor& y, const Tensor& k, const ConvSpec& spec, std::int64_t in_h,
                        std::int64_t in_w) {
  if (y.rank() != 4) throw ShapeError("conv2d_transpose: input must be rank 4");
  if (k.rank() != 4) throw ShapeError("conv2d_transpose: kernel must be rank 4");
  const Shape in_shape{y.dim(0), k.dim(1) * spec.groups, in_h, in_w};
  const auto g = make_geom(in_shape, k.shape(), spec);
  if (y.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw ShapeError("conv2d_transpose: " + shape_str(y.shape()) + " is not an output of " +
                     shape_str(k.shape()) + " on " + shape_str(in_shape));
  }
  Tensor x(in_shape);
  RowMat gy, cols;
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    gather_out(y, g, grp, gy);
    cols.noalias() = kernel_block(k, g, grp).transpose() * gy;
    col2im_add(cols, g, grp, x);
  }
  return x;
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gy, const Shape& kshape,
                          const ConvSpec& spec) {
  const auto g = make_geom(x.shape(), kshape, spec);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw ShapeError("conv2d_kernel_grad: gradient shape mismatch");
  }
  Tensor gk(kshape);
  RowMat cols, gyb;
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    im2col(x, g, grp, cols);
    gather_out(gy, g, grp, gyb);
    Eigen::Map<RowMat> blk(gk.data() + grp * g.cog * g.rows(), g.cog, g.rows());
    blk.noalias() = gyb * cols.transpose();
  }
  return gk;
}

namespace {

void require_rank4(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected [N,C,H,W], got " +
                                      shape_str(x.shape()));
}

}  // namespace

Tensor sum_pool2(const Tensor& x) {
  require_rank4(x, "pool2");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("pool2: input smaller than the 2x2 window");
  Tensor y(Shape{n, c, ho, wo});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          y.at(b, ch, i, j) = x.at(b, ch, 2 * i, 2 * j) + x.at(b, ch, 2 * i, 2 * j + 1) +
                              x.at(b, ch, 2 * i + 1, 2 * j) + x.at(b, ch, 2 * i + 1, 2 * j + 1);
        }
  return y;
}

Tensor avg_pool2(const Tensor& x) {
  Tensor y = sum_pool2(x);
  for (auto& v : y.values()) v *= 0.25;
  return y;
}

Tensor avg_pool2_transpose(const Tensor& gy, const Shape& in_shape) {
  if (in_shape.size() != 4) throw ShapeError("avg_pool2_transpose: bad input shape");
  const auto n = in_shape[0], c = in_shape[1];
  const auto ho = in_shape[2] / 2, wo = in_shape[3] / 2;
  if (gy.shape() != Shape{n, c, ho, wo}) throw ShapeError("avg_pool2_transpose: shape mismatch");
  Tensor x(in_shape);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          const double v = 0.25 * gy.at(b, ch, i, j);
          x.at(b, ch, 2 * i, 2 * j) = v;
          x.at(b, ch, 2 * i, 2 * j + 1) = v;
          x.at(b, ch, 2 * i + 1, 2 * j) = v;
          x.at(b, ch, 2 * i + 1, 2 * j + 1) = v;
        }
  return x;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y(Shape{n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const double* p = x.data() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) s += p[j];
    y[i] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor global_avg_pool_transpose(const Tensor& gy, const Shape& in_shape) {
  const auto n = in_shape.at(0), c = in_shape.at(1), plane = in_shape.at(2) * in_shape.at(3);
  if (gy.shape() != Shape{n, c}) throw ShapeError("global_avg_pool_transpose: shape mismatch");
  Tensor x(in_shape);
  for (std::int64_t i = 0; i < n * c; ++i) {
    const double v = gy[i] / static_cast<double>(plane);
    double* p = x.data() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) p[j] = v;
  }
  return x;
}

// ---------------------------------------------------------------------------
// TV smoothing

namespace {

// Applies f to every horizontal and vertical forward difference d = x[next] - x[cur]
// and accumulates Gx^T f + Gy^T f into out (edge value v subtracts from cur and
// adds to next).
template <typename F>
void for_each_difference(const Tensor& x, Tensor& out, F&& f) {
  const auto n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const double* xd = x.data();
  double* od = out.data();
  for (std::int64_t m = 0; m < n; ++m) {
    const double* p = xd + m * h * w;
    double* o = od + m * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j + 1 < w; ++j) {
        const std::int64_t a = i * w + j, b = a + 1;
        const double v = f(p[b] - p[a], a, b, m);
        o[a] -= v;
        o[b] += v;
      }
    }
    for (std::int64_t i = 0; i + 1 < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t a = i * w + j, b = a + w;
        const double v = f(p[b] - p[a], a, b, m);
        o[a] -= v;
        o[b] += v;
      }
    }
  }
}

}  // namespace

Tensor tv_diffusion(const Tensor& x, double eps) {
  require_rank4(x, "tv_smooth");
  Tensor d(x.shape());
  for_each_difference(x, d, [eps](double g, auto, auto, auto) { return g / (std::abs(g) + eps); });
  return d;
}

Tensor tv_smooth(const Tensor& x, double gamma2, double eps) {
  Tensor d = tv_diffusion(x, eps);
  Tensor y = x;
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= gamma2 * d[i];
  return y;
}

Tensor tv_smooth_sign(const Tensor& x, double gamma2) {
  require_rank4(x, "tv_smooth_sign");
  Tensor d(x.shape());
  for_each_difference(x, d, [](double g, auto, auto, auto) {
    return static_cast<double>((g > 0.0) - (g < 0.0));
  });
  Tensor y = x;
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= gamma2 * d[i];
  return y;
}

Tensor tv_smooth_vjp(const Tensor& x, const Tensor& g, double gamma2, double eps) {
  require_same_shape(x, g, "tv_smooth_vjp");
  // J = I - gamma2 * sum_e G_e^T diag(phi'(G_e x)) G_e,  phi'(t) = eps / (|t| + eps)^2
  Tensor d(x.shape());
  const auto plane = x.dim(2) * x.dim(3);
  const double* gd = g.data();
  for_each_difference(x, d, [&](double t, std::int64_t a, std::int64_t b, std::int64_t m) {
    const double s = std::abs(t) + eps;
    const double gdiff = gd[m * plane + b] - gd[m * plane + a];
    return eps / (s * s) * gdiff;
  });
  Tensor out = g;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= gamma2 * d[i];
  return out;
}

double tv_norm(const Tensor& x) {
  require_rank4(x, "tv_norm");
  Tensor sink(x.shape());
  double total = 0.0;
  for_each_difference(x, sink, [&total](double g, auto, auto, auto) {
    total += std::abs(g);
    return 0.0;
  });
  return total;
}

Tensor tv_norm_grad(const Tensor& x) {
  require_rank4(x, "tv_norm_grad");
  Tensor d(x.shape());
  for_each_difference(x, d, [](double g, auto, auto, auto) {
    return static_cast<double>((g > 0.0) - (g < 0.0));
  });
  return d;
}

}  // namespace sqnt::kernels
