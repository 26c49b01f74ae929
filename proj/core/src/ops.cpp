#include "sne/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sne::ops {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using detail::ImplPtr;

ConstMap cmap(const std::vector<real>& v, std::size_t rows, std::size_t cols,
              std::size_t offset = 0) {
  return ConstMap(v.data() + offset, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::vector<real>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MutMap(v.data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

bool tracks(const ImplPtr& p) { return p->requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " * " +
                       shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  mmap(out.impl()->data, m, n).noalias() = cmap(a.impl()->data, m, k) * cmap(b.impl()->data, k, n);
  if (detail::any_requires_grad({&a, &b})) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = out.impl();
    detail::record(out, [pa, pb, po, m, k, n] {
      auto g = cmap(po->grad, m, n);
      if (tracks(pa)) mmap(pa->grad_buffer(), m, k).noalias() += g * cmap(pb->data, k, n).transpose();
      if (tracks(pb)) mmap(pb->grad_buffer(), k, n).noalias() += cmap(pa->data, m, k).transpose() * g;
    }, "matmul");
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    fail("linear", "input width " + std::to_string(in) + " does not match weight " +
                       shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != outf)) {
    fail("linear", "bias shape " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(outf) + " outputs");
  }
  Tensor out(Shape{n, outf});
  auto y = mmap(out.impl()->data, n, outf);
  y.noalias() = cmap(x.impl()->data, n, in) * cmap(weight.impl()->data, outf, in).transpose();
  if (has_bias) y.rowwise() += cmap(bias.impl()->data, 1, outf).row(0);
  if (detail::any_requires_grad({&x, &weight, &bias})) {
    ImplPtr px = x.impl(), pw = weight.impl(), po = out.impl();
    ImplPtr pb = has_bias ? bias.impl() : nullptr;
    detail::record(out, [px, pw, pb, po, n, in, outf] {
      auto g = cmap(po->grad, n, outf);
      if (tracks(px)) mmap(px->grad_buffer(), n, in).noalias() += g * cmap(pw->data, outf, in);
      if (tracks(pw)) mmap(pw->grad_buffer(), outf, in).noalias() += g.transpose() * cmap(px->data, n, in);
      if (pb && tracks(pb)) mmap(pb->grad_buffer(), 1, outf) += g.colwise().sum();
    }, "linear");
  }
  return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const std::string& op, const Tensor& a, const Tensor& b, Fwd fwd,
                          Bwd bwd) {
  require_same_shape(op, a, b);
  Tensor out(a.shape());
  const auto& av = a.impl()->data;
  const auto& bv = b.impl()->data;
  auto& ov = out.impl()->data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  if (detail::any_requires_grad({&a, &b})) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = out.impl();
    detail::record(out, [pa, pb, po, bwd] {
      const auto& g = po->grad;
      real* ga = tracks(pa) ? pa->grad_buffer().data() : nullptr;
      real* gb = tracks(pb) ? pb->grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto [da, db] = bwd(pa->data[i], pb->data[i]);
        if (ga) ga[i] += g[i] * da;
        if (gb) gb[i] += g[i] * db;
      }
    }, op);
  }
  return out;
}

// dfn receives (input, output) and returns d output / d input.
template <class Fwd, class Deriv>
Tensor unary_elementwise(const std::string& op, const Tensor& x, Fwd fwd, Deriv dfn) {
  Tensor out(x.shape());
  const auto& xv = x.impl()->data;
  auto& ov = out.impl()->data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po, dfn] {
      const auto& g = po->grad;
      auto& gx = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfn(px->data[i], po->data[i]);
    }, op);
  }
  return out;
}

struct Pair {
  real a, b;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](real x, real y) { return x + y; },
      [](real, real) { return Pair{1, 1}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](real x, real y) { return x - y; },
      [](real, real) { return Pair{1, -1}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](real x, real y) { return x * y; },
      [](real x, real y) { return Pair{y, x}; });
}

Tensor scale(const Tensor& x, real factor) {
  return unary_elementwise(
      "scale", x, [factor](real v) { return v * factor; },
      [factor](real, real) { return factor; });
}

Tensor square(const Tensor& x) {
  return unary_elementwise(
      "square", x, [](real v) { return v * v; }, [](real v, real) { return 2 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x, [](real v) { return real(1) / (real(1) + std::exp(-v)); },
      [](real, real y) { return y * (1 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      "relu", x, [](real v) { return v > 0 ? v : real(0); },
      [](real v, real) { return v > 0 ? real(1) : real(0); });
}

Tensor sum(const Tensor& x) {
  const auto& xv = x.impl()->data;
  Tensor out = Tensor::scalar(std::accumulate(xv.begin(), xv.end(), real(0)));
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po] {
      const real g = po->grad[0];
      for (auto& v : px->grad_buffer()) v += g;
    }, "sum");
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) fail("mean", "empty tensor");
  return scale(sum(x), real(1) / static_cast<real>(x.numel()));
}

Tensor sum_rows(const Tensor& x) {
  if (x.rank() < 1) fail("sum_rows", "rank-0 tensor");
  const std::size_t n = x.dim(0), inner = n ? x.numel() / n : 0;
  Tensor out(Shape{n});
  const auto& xv = x.impl()->data;
  for (std::size_t r = 0; r < n; ++r) {
    real acc = 0;
    for (std::size_t j = 0; j < inner; ++j) acc += xv[r * inner + j];
    out[r] = acc;
  }
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po, n, inner] {
      auto& gx = px->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < inner; ++j) gx[r * inner + j] += po->grad[r];
    }, "sum_rows");
  }
  return out;
}

Tensor mean_leading(const Tensor& x) {
  if (x.rank() < 2) fail("mean_leading", "expected rank >= 2, got " + shape_str(x.shape()));
  const std::size_t t = x.dim(0);
  if (t == 0) fail("mean_leading", "empty leading axis");
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::size_t inner = shape_numel(rest);
  Tensor out(rest);
  const auto& xv = x.impl()->data;
  auto& ov = out.impl()->data;
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t j = 0; j < inner; ++j) ov[j] += xv[s * inner + j];
  const real inv = real(1) / static_cast<real>(t);
  for (auto& v : ov) v *= inv;
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po, t, inner, inv] {
      auto& gx = px->grad_buffer();
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < inner; ++j) gx[s * inner + j] += po->grad[j] * inv;
    }, "mean_leading");
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.impl()->data);
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po] {
      auto& gx = px->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += po->grad[i];
    }, "reshape");
  }
  return out;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (stride == 0) fail("conv2d", "stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel > padded) {
    fail("conv2d", "kernel " + std::to_string(kernel) + " exceeds padded input " +
                       std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

struct ConvGeom {
  std::size_t c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const real* img, const ConvGeom& g, real* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        real* row = col + ((ch * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          real* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, real(0));
            continue;
          }
          const real* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? real(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const real* col, const ConvGeom& g, real* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const real* row = col + ((ch * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          real* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dst[static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opt, const Tensor& bias) {
  require_rank("conv2d", input, 4);
  require_rank("conv2d", kernel, 4);
  if (kernel.dim(1) != input.dim(1)) {
    fail("conv2d", "input channels " + std::to_string(input.dim(1)) + " vs kernel " +
                       shape_str(kernel.shape()));
  }
  ConvGeom g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
             kernel.dim(3), 0, 0, opt.stride, opt.padding};
  g.oh = conv_output_size(g.h, g.kh, g.stride, g.pad);
  g.ow = conv_output_size(g.w, g.kw, g.stride, g.pad);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    fail("conv2d", "bias shape " + shape_str(bias.shape()) + " for " + std::to_string(g.o) +
                       " output channels");
  }
  const std::size_t batch = input.dim(0);
  const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.o * g.oh * g.ow;
  Tensor out(Shape{batch, g.o, g.oh, g.ow});
  const auto& xv = input.impl()->data;
  auto& ov = out.impl()->data;
  const auto wmat = cmap(kernel.impl()->data, g.o, g.col_rows());
  std::vector<real> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < batch; ++n) {
    auto y = mmap(ov, g.o, g.col_cols(), n * out_sz);
    if (g.pointwise()) {
      y.noalias() = wmat * cmap(xv, g.c, g.col_cols(), n * in_sz);
    } else {
      im2col(xv.data() + n * in_sz, g, col.data());
      y.noalias() = wmat * cmap(col, g.col_rows(), g.col_cols());
    }
    if (has_bias) y.colwise() += cmap(bias.impl()->data, g.o, 1).col(0);
  }
  if (detail::any_requires_grad({&input, &kernel, &bias})) {
    ImplPtr px = input.impl(), pk = kernel.impl(), po = out.impl();
    ImplPtr pb = has_bias ? bias.impl() : nullptr;
    detail::record(out, [px, pk, pb, po, g, batch, in_sz, out_sz] {
      const bool gx = tracks(px), gk = tracks(pk), gb = pb && tracks(pb);
      std::vector<real> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
      std::vector<real> dcol(col.size());
      const auto wmat = cmap(pk->data, g.o, g.col_rows());
      for (std::size_t n = 0; n < batch; ++n) {
        const auto gy = cmap(po->grad, g.o, g.col_cols(), n * out_sz);
        if (gk) {
          auto dw = mmap(pk->grad_buffer(), g.o, g.col_rows());
          if (g.pointwise()) {
            dw.noalias() += gy * cmap(px->data, g.c, g.col_cols(), n * in_sz).transpose();
          } else {
            im2col(px->data.data() + n * in_sz, g, col.data());
            dw.noalias() += gy * cmap(col, g.col_rows(), g.col_cols()).transpose();
          }
        }
        if (gx) {
          if (g.pointwise()) {
            mmap(px->grad_buffer(), g.c, g.col_cols(), n * in_sz).noalias() +=
                wmat.transpose() * gy;
          } else {
            mmap(dcol, g.col_rows(), g.col_cols()).noalias() = wmat.transpose() * gy;
            col2im_add(dcol.data(), g, px->grad_buffer().data() + n * in_sz);
          }
        }
        if (gb) mmap(pb->grad_buffer(), g.o, 1) += gy.rowwise().sum();
      }
    }, "conv2d");
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  require_rank("maxpool2d", input, 4);
  if (window == 0 || stride == 0) fail("maxpool2d", "window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    fail("maxpool2d", "window " + std::to_string(window) + " larger than input " +
                          std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const auto& xv = input.impl()->data;
  auto& ov = out.impl()->data;
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * w + ox * stride + kx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        argmax[o] = best;
        ov[o] = xv[best];
      }
    }
  }
  if (detail::any_requires_grad({&input})) {
    ImplPtr px = input.impl(), po = out.impl();
    detail::record(out, [px, po, argmax = std::move(argmax)] {
      auto& gx = px->grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += po->grad[i];
    }, "maxpool2d");
  }
  return out;
}

Tensor maxpool2d_per_timestep(const Tensor& input, std::size_t window, std::size_t stride) {
  require_rank("maxpool2d_per_timestep", input, 5);
  const auto& s = input.shape();
  Tensor flat = reshape(input, Shape{s[0] * s[1], s[2], s[3], s[4]});
  Tensor pooled = maxpool2d(flat, window, stride);
  return reshape(pooled, Shape{s[0], s[1], s[2], pooled.dim(2), pooled.dim(3)});
}

Tensor global_avgpool(const Tensor& input) {
  require_rank("global_avgpool", input, 4);
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) fail("global_avgpool", "empty spatial extent");
  Tensor out(Shape{n, c});
  const auto& xv = input.impl()->data;
  const real inv = real(1) / static_cast<real>(hw);
  for (std::size_t p = 0; p < n * c; ++p) {
    real acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += xv[p * hw + j];
    out[p] = acc * inv;
  }
  if (detail::any_requires_grad({&input})) {
    ImplPtr px = input.impl(), po = out.impl();
    detail::record(out, [px, po, n, c, hw, inv] {
      auto& gx = px->grad_buffer();
      for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t j = 0; j < hw; ++j) gx[p * hw + j] += po->grad[p] * inv;
    }, "global_avgpool");
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, BatchNormOptions opt) {
  if (input.rank() < 2) fail("batch_norm", "expected [N x C x ...], got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t spatial = (n * c) != 0 ? input.numel() / (n * c) : 0;
  if (gamma.numel() != c || beta.numel() != c) {
    fail("batch_norm", "affine parameters must have " + std::to_string(c) + " entries");
  }
  if (stats.running_mean.size() != c || stats.running_var.size() != c) {
    fail("batch_norm", "running statistics sized for " +
                           std::to_string(stats.running_mean.size()) + " channels, input has " +
                           std::to_string(c));
  }
  const std::size_t m = n * spatial;
  if (opt.training && m == 0) fail("batch_norm", "empty batch");
  const auto& xv = input.impl()->data;
  const auto& gv = gamma.impl()->data;
  const auto& bv = beta.impl()->data;
  Tensor out(input.shape());
  auto& ov = out.impl()->data;
  std::vector<real> xhat(opt.training ? xv.size() : 0);
  std::vector<real> inv_std(c);
  auto index = [c, spatial](std::size_t s, std::size_t ch, std::size_t j) {
    return (s * c + ch) * spatial + j;
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    real mu, var;
    if (opt.training) {
      double acc = 0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < spatial; ++j) acc += xv[index(s, ch, j)];
      mu = static_cast<real>(acc / static_cast<double>(m));
      double sq = 0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < spatial; ++j) {
          const double d = xv[index(s, ch, j)] - mu;
          sq += d * d;
        }
      var = static_cast<real>(sq / static_cast<double>(m));
      const real unbiased = m > 1 ? var * static_cast<real>(m) / static_cast<real>(m - 1) : var;
      stats.running_mean[ch] = (1 - opt.momentum) * stats.running_mean[ch] + opt.momentum * mu;
      stats.running_var[ch] = (1 - opt.momentum) * stats.running_var[ch] + opt.momentum * unbiased;
    } else {
      mu = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    const real is = real(1) / std::sqrt(var + opt.eps);
    inv_std[ch] = is;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < spatial; ++j) {
        const std::size_t i = index(s, ch, j);
        const real xh = (xv[i] - mu) * is;
        if (opt.training) xhat[i] = xh;
        ov[i] = gv[ch] * xh + bv[ch];
      }
  }
  if (detail::any_requires_grad({&input, &gamma, &beta})) {
    ImplPtr px = input.impl(), pg = gamma.impl(), pb = beta.impl(), po = out.impl();
    const bool training = opt.training;
    std::vector<real> run_mean = stats.running_mean;
    detail::record(out, [px, pg, pb, po, n, c, spatial, m, training, index,
                         xhat = std::move(xhat), inv_std = std::move(inv_std),
                         run_mean = std::move(run_mean)] {
      const auto& gy = po->grad;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0, sum_gx = 0;
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < spatial; ++j) {
            const std::size_t i = index(s, ch, j);
            const real xh = training ? xhat[i] : (px->data[i] - run_mean[ch]) * inv_std[ch];
            sum_g += gy[i];
            sum_gx += gy[i] * xh;
          }
        if (tracks(pg)) pg->grad_buffer()[ch] += static_cast<real>(sum_gx);
        if (tracks(pb)) pb->grad_buffer()[ch] += static_cast<real>(sum_g);
        if (!tracks(px)) continue;
        auto& gx = px->grad_buffer();
        const real gam = pg->data[ch], is = inv_std[ch];
        if (!training) {
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t j = 0; j < spatial; ++j) {
              const std::size_t i = index(s, ch, j);
              gx[i] += gy[i] * gam * is;
            }
          continue;
        }
        const real mean_g = static_cast<real>(sum_g / static_cast<double>(m));
        const real mean_gx = static_cast<real>(sum_gx / static_cast<double>(m));
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < spatial; ++j) {
            const std::size_t i = index(s, ch, j);
            gx[i] += gam * is * (gy[i] - mean_g - xhat[i] * mean_gx);
          }
      }
    }, "batch_norm");
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat", "no parts");
  const std::size_t b = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat", p, 2);
    if (p.dim(0) != b) {
      fail("concat", "batch mismatch " + std::to_string(p.dim(0)) + " vs " + std::to_string(b));
    }
    total += p.dim(1);
  }
  Tensor out(Shape{b, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t d = p.dim(1);
    for (std::size_t r = 0; r < b; ++r)
      std::copy_n(p.impl()->data.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  out.impl()->data.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    offsets.push_back(off);
    off += d;
  }
  if (detail::any_requires_grad(parts)) {
    std::vector<ImplPtr> ps;
    for (const auto& p : parts) ps.push_back(p.impl());
    ImplPtr po = out.impl();
    detail::record(out, [ps, po, offsets, b, total] {
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!tracks(ps[k])) continue;
        const std::size_t d = ps[k]->shape[1];
        auto& gp = ps[k]->grad_buffer();
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t j = 0; j < d; ++j) gp[r * d + j] += po->grad[r * total + offsets[k] + j];
      }
    }, "concat");
  }
  return out;
}

Tensor select_columns(const Tensor& x, std::span<const std::size_t> columns) {
  require_rank("select_columns", x, 2);
  const std::size_t b = x.dim(0), d = x.dim(1), k = columns.size();
  for (auto col : columns) {
    if (col >= d) {
      fail("select_columns", "column " + std::to_string(col) + " out of range for width " +
                                 std::to_string(d));
    }
  }
  Tensor out(Shape{b, k});
  const auto& xv = x.impl()->data;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xv[r * d + columns[j]];
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    std::vector<std::size_t> cols(columns.begin(), columns.end());
    detail::record(out, [px, po, cols = std::move(cols), b, d, k] {
      auto& gx = px->grad_buffer();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < k; ++j) gx[r * d + cols[j]] += po->grad[r * k + j];
    }, "select_columns");
  }
  return out;
}

Tensor normalize_rows(const Tensor& x, real eps) {
  require_rank("normalize_rows", x, 2);
  const std::size_t b = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  std::vector<real> norms(b);
  const auto& xv = x.impl()->data;
  for (std::size_t r = 0; r < b; ++r) {
    real sq = eps * eps;
    for (std::size_t j = 0; j < d; ++j) sq += xv[r * d + j] * xv[r * d + j];
    norms[r] = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norms[r];
  }
  if (detail::any_requires_grad({&x})) {
    ImplPtr px = x.impl(), po = out.impl();
    detail::record(out, [px, po, norms = std::move(norms), b, d] {
      auto& gx = px->grad_buffer();
      for (std::size_t r = 0; r < b; ++r) {
        real dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += po->grad[r * d + j] * po->data[r * d + j];
        for (std::size_t j = 0; j < d; ++j)
          gx[r * d + j] += (po->grad[r * d + j] - po->data[r * d + j] * dot) / norms[r];
      }
    }, "normalize_rows");
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (b == 0) fail("cross_entropy", "empty batch");
  if (labels.size() != b) {
    fail("cross_entropy", std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      fail("cross_entropy", "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto& z = logits.impl()->data;
  std::vector<real> prob(z.size());
  double total = 0;
  for (std::size_t r = 0; r < b; ++r) {
    const real* row = z.data() + r * k;
    const real mx = *std::max_element(row, row + k);
    real se = 0;
    for (std::size_t j = 0; j < k; ++j) {
      prob[r * k + j] = std::exp(row[j] - mx);
      se += prob[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) prob[r * k + j] /= se;
    total += std::log(se) + mx - row[labels[r]];
  }
  Tensor out = Tensor::scalar(static_cast<real>(total / static_cast<double>(b)));
  if (detail::any_requires_grad({&logits})) {
    ImplPtr pz = logits.impl(), po = out.impl();
    std::vector<int> ys(labels.begin(), labels.end());
    detail::record(out, [pz, po, prob = std::move(prob), ys = std::move(ys), b, k] {
      const real g = po->grad[0] / static_cast<real>(b);
      auto& gz = pz->grad_buffer();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < k; ++j)
          gz[r * k + j] += g * (prob[r * k + j] - (static_cast<int>(j) == ys[r] ? real(1) : real(0)));
    }, "cross_entropy");
  }
  return out;
}

}  // namespace sne::ops
