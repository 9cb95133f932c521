#pragma once

// Differentiable operations over `Graph`. Every op validates shapes, computes
// its forward value with 64-bit accumulation, and records a closure that
// pushes gradients to whichever inputs require them.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace rx {

namespace detail {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::Matrix<double, Eigen::Dynamic, 1>;

template <typename T>
[[noreturn]] void shape_fail(OpKind op, const std::string& msg, const std::vector<Shape>& shapes) {
  std::string s = std::string(op_name(op)) + ": " + msg + " (shapes:";
  for (const auto& sh : shapes) s += " " + to_string(sh);
  throw ShapeError(s + ")");
}

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b, OpKind op) {
  if (a.graph != b.graph)
    throw Error("graph", std::string(op_name(op)) + ": inputs belong to different graphs");
}

template <typename T>
std::vector<double> to_double(std::span<const T> v) {
  return std::vector<double>(v.begin(), v.end());
}

template <typename T>
Tensor<T> from_double(const Shape& s, const double* p) {
  std::vector<T> v(static_cast<std::size_t>(numel(s)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(p[i]);
  return Tensor<T>(s, std::move(v));
}

struct ConvGeom {
  std::int64_t c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::int64_t k() const { return c * kh * kw; }
  std::int64_t p() const { return oh * ow; }
};

// Unfold one CHW image into a (C*KH*KW) x (OH*OW) column matrix.
template <typename T>
void im2col(const T* img, const ConvGeom& g, MatD& cols) {
  cols.resize(g.k(), g.p());
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t ki = 0; ki < g.kh; ++ki)
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols.data() + ((c * g.kh + ki) * g.kw + kj) * g.p();
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            row[oi * g.ow + oj] = (ii >= 0 && ii < g.h && jj >= 0 && jj < g.w)
                                      ? static_cast<double>(img[(c * g.h + ii) * g.w + jj])
                                      : 0.0;
          }
        }
      }
}

inline void col2im(const MatD& cols, const ConvGeom& g, double* img) {
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t ki = 0; ki < g.kh; ++ki)
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols.data() + ((c * g.kh + ki) * g.kw + kj) * g.p();
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h) continue;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            if (jj < 0 || jj >= g.w) continue;
            img[(c * g.h + ii) * g.w + jj] += row[oi * g.ow + oj];
          }
        }
      }
}

// Source coordinates and weights for one axis of an align-corners=false
// bilinear resample.
struct ResampleAxis {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

inline ResampleAxis resample_axis(std::int64_t in, std::int64_t out) {
  ResampleAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}


}  // namespace detail

// x: N x C x H x W, weight: O x C x KH x KW, bias: O.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::int64_t stride = 1, std::int64_t pad = 0) {
  detail::require_same_graph(x, weight, OpKind::conv2d);
  detail::require_same_graph(x, bias, OpKind::conv2d);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const auto& bs = bias.shape();
  if (xs.size() != 4 || ws.size() != 4 || bs.size() != 1 || xs[1] != ws[1] || bs[0] != ws[0] || stride < 1 ||
      pad < 0)
    detail::shape_fail<T>(OpKind::conv2d, "expected x NCHW, weight OCKK, bias O with matching C", {xs, ws, bs});
  detail::ConvGeom g{xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad, 0, 0};
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3])
    detail::shape_fail<T>(OpKind::conv2d, "kernel larger than padded input", {xs, ws, bs});
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  const std::int64_t n = xs[0];
  const Shape out_shape{n, g.o, g.oh, g.ow};

  const detail::MatD wd = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                              weight.value().data(), g.o, g.k())
                              .template cast<double>();
  const auto bd = detail::to_double(bias.value().values());
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  detail::MatD cols, prod;
  const T* xv = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col(xv + i * g.c * g.h * g.w, g, cols);
    prod.noalias() = wd * cols;
    double* dst = out.data() + i * g.o * g.p();
    for (std::int64_t o = 0; o < g.o; ++o)
      for (std::int64_t p = 0; p < g.p(); ++p) dst[o * g.p() + p] = prod(o, p) + bd[o];
  }

  const int xi = x.id, wi = weight.id, bi = bias.id;
  return x.graph->record(
      OpKind::conv2d, {xi, wi, bi}, detail::from_double<T>(out_shape, out.data()),
      [g, n, xi, wi, bi, wd](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
        const bool need_x = gr.requires_grad(xi), need_w = gr.requires_grad(wi), need_b = gr.requires_grad(bi);
        const T* xv = gr.value(xi).data();
        detail::MatD dw = detail::MatD::Zero(g.o, g.k());
        std::vector<double> db(static_cast<std::size_t>(g.o), 0.0);
        std::vector<double> dx(need_x ? static_cast<std::size_t>(n * g.c * g.h * g.w) : 0, 0.0);
        detail::MatD cols, dcols, go;
        for (std::int64_t i = 0; i < n; ++i) {
          go = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   gout.data() + i * g.o * g.p(), g.o, g.p())
                   .template cast<double>();
          if (need_w) {
            detail::im2col(xv + i * g.c * g.h * g.w, g, cols);
            dw.noalias() += go * cols.transpose();
          }
          if (need_b)
            for (std::int64_t o = 0; o < g.o; ++o) db[o] += go.row(o).sum();
          if (need_x) {
            dcols.noalias() = wd.transpose() * go;
            detail::col2im(dcols, g, dx.data() + i * g.c * g.h * g.w);
          }
        }
        if (need_x) grads.add(xi, detail::from_double<T>(gr.value(xi).shape(), dx.data()));
        if (need_w) grads.add(wi, detail::from_double<T>(gr.value(wi).shape(), dw.data()));
        if (need_b) grads.add(bi, detail::from_double<T>(gr.value(bi).shape(), db.data()));
      });
}

// x: N x I, weight: O x I, bias: O. Computed per row so results do not
// depend on batch composition.
template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias) {
  detail::require_same_graph(x, weight, OpKind::dense);
  detail::require_same_graph(x, bias, OpKind::dense);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const auto& bs = bias.shape();
  if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[1] || bs[0] != ws[0])
    detail::shape_fail<T>(OpKind::dense, "expected x NxI, weight OxI, bias O", {xs, ws, bs});
  const std::int64_t n = xs[0], in = xs[1], o = ws[0];
  const detail::MatD wd =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(weight.value().data(), o, in)
          .template cast<double>();
  const auto bd = detail::to_double(bias.value().values());
  std::vector<double> out(static_cast<std::size_t>(n * o));
  detail::VecD xr, yr;
  for (std::int64_t i = 0; i < n; ++i) {
    xr = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.value().data() + i * in, in).template cast<double>();
    yr.noalias() = wd * xr;
    for (std::int64_t j = 0; j < o; ++j) out[i * o + j] = yr[j] + bd[j];
  }
  const int xi = x.id, wi = weight.id, bi = bias.id;
  return x.graph->record(
      OpKind::dense, {xi, wi, bi}, detail::from_double<T>(Shape{n, o}, out.data()),
      [n, in, o, xi, wi, bi, wd](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
        const bool need_x = gr.requires_grad(xi), need_w = gr.requires_grad(wi), need_b = gr.requires_grad(bi);
        detail::MatD dw = detail::MatD::Zero(o, in);
        std::vector<double> db(static_cast<std::size_t>(o), 0.0);
        std::vector<double> dx(need_x ? static_cast<std::size_t>(n * in) : 0);
        detail::VecD g, xr, dxr;
        for (std::int64_t i = 0; i < n; ++i) {
          g = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(gout.data() + i * o, o).template cast<double>();
          if (need_w) {
            xr = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(gr.value(xi).data() + i * in, in)
                     .template cast<double>();
            dw.noalias() += g * xr.transpose();
          }
          if (need_b)
            for (std::int64_t j = 0; j < o; ++j) db[j] += g[j];
          if (need_x) {
            dxr.noalias() = wd.transpose() * g;
            std::copy(dxr.data(), dxr.data() + in, dx.begin() + i * in);
          }
        }
        if (need_x) grads.add(xi, detail::from_double<T>(gr.value(xi).shape(), dx.data()));
        if (need_w) grads.add(wi, detail::from_double<T>(gr.value(wi).shape(), dw.data()));
        if (need_b) grads.add(bi, detail::from_double<T>(gr.value(bi).shape(), db.data()));
      });
}

// Subgradient at 0 is 0.
template <typename T>
Var<T> relu(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(xv.size()));
  for (std::int64_t i = 0; i < xv.size(); ++i) {
    mask[i] = xv[i] > T{0};
    out[i] = mask[i] ? xv[i] : T{0};
  }
  x.graph->note_branch(fnv1a(mask.data(), mask.size()));
  const int xi = x.id;
  return x.graph->record(OpKind::relu, {xi}, std::move(out),
                         [xi, mask = std::move(mask)](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
                           Tensor<T> dx(gr.value(xi).shape());
                           for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] = mask[i] ? gout[i] : T{0};
                           grads.add(xi, dx);
                         });
}

namespace detail {

template <typename T>
Shape pool_shape(const Var<T>& x, std::int64_t k, std::int64_t stride, OpKind op) {
  const auto& s = x.shape();
  if (s.size() != 4 || k < 1 || stride < 1 || s[2] < k || s[3] < k)
    shape_fail<T>(op, detail::cat("window ", k, " stride ", stride, " does not fit NCHW input"), {s});
  return Shape{s[0], s[1], (s[2] - k) / stride + 1, (s[3] - k) / stride + 1};
}

}  // namespace detail

// Ties resolve to the first window element in row-major order.
template <typename T>
Var<T> maxpool2d(Var<T> x, std::int64_t k, std::int64_t stride = 0) {
  if (stride == 0) stride = k;
  const Shape os = detail::pool_shape(x, k, stride, OpKind::maxpool2d);
  const auto& xs = x.shape();
  const auto& xv = x.value();
  Tensor<T> out(os);
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.size()));
  std::int64_t idx = 0;
  for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc) {
    const std::int64_t base = nc * xs[2] * xs[3];
    for (std::int64_t i = 0; i < os[2]; ++i)
      for (std::int64_t j = 0; j < os[3]; ++j, ++idx) {
        std::int64_t best = base + (i * stride) * xs[3] + j * stride;
        for (std::int64_t a = 0; a < k; ++a)
          for (std::int64_t b = 0; b < k; ++b) {
            const std::int64_t p = base + (i * stride + a) * xs[3] + (j * stride + b);
            if (xv[p] > xv[best]) best = p;
          }
        arg[idx] = best;
        out[idx] = xv[best];
      }
  }
  x.graph->note_branch(fnv1a(arg.data(), arg.size() * sizeof(std::int64_t)));
  const int xi = x.id;
  return x.graph->record(OpKind::maxpool2d, {xi}, std::move(out),
                         [xi, arg = std::move(arg)](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
                           Tensor<T> dx(gr.value(xi).shape());
                           for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += gout[i];
                           grads.add(xi, dx);
                         });
}

template <typename T>
Var<T> avgpool2d(Var<T> x, std::int64_t k, std::int64_t stride = 0) {
  if (stride == 0) stride = k;
  const Shape os = detail::pool_shape(x, k, stride, OpKind::avgpool2d);
  const Shape xs = x.shape();
  const auto& xv = x.value();
  Tensor<T> out(os);
  const double inv = 1.0 / static_cast<double>(k * k);
  std::int64_t idx = 0;
  for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc) {
    const std::int64_t base = nc * xs[2] * xs[3];
    for (std::int64_t i = 0; i < os[2]; ++i)
      for (std::int64_t j = 0; j < os[3]; ++j, ++idx) {
        double acc = 0;
        for (std::int64_t a = 0; a < k; ++a)
          for (std::int64_t b = 0; b < k; ++b) acc += xv[base + (i * stride + a) * xs[3] + (j * stride + b)];
        out[idx] = static_cast<T>(acc * inv);
      }
  }
  const int xi = x.id;
  return x.graph->record(
      OpKind::avgpool2d, {xi}, std::move(out),
      [xi, xs, os, k, stride, inv](const Graph<T>&, const Tensor<T>& gout, GradMap<T>& grads) {
        std::vector<double> dx(static_cast<std::size_t>(numel(xs)), 0.0);
        std::int64_t idx = 0;
        for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc) {
          const std::int64_t base = nc * xs[2] * xs[3];
          for (std::int64_t i = 0; i < os[2]; ++i)
            for (std::int64_t j = 0; j < os[3]; ++j, ++idx) {
              const double g = static_cast<double>(gout[idx]) * inv;
              for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b) dx[base + (i * stride + a) * xs[3] + (j * stride + b)] += g;
            }
        }
        grads.add(xi, detail::from_double<T>(xs, dx.data()));
      });
}

// N x ... -> N x prod(...)
template <typename T>
Var<T> flatten(Var<T> x) {
  const Shape xs = x.shape();
  if (xs.empty()) detail::shape_fail<T>(OpKind::flatten, "needs a leading batch axis", {xs});
  const std::int64_t n = xs[0];
  const std::int64_t rest = n ? x.value().size() / n : numel(Shape(xs.begin() + 1, xs.end()));
  const int xi = x.id;
  return x.graph->record(OpKind::flatten, {xi}, x.value().reshaped(Shape{n, rest}),
                         [xi, xs](const Graph<T>&, const Tensor<T>& gout, GradMap<T>& grads) {
                           grads.add(xi, xs, gout.values());
                         });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b, OpKind::add);
  if (a.shape() != b.shape()) detail::shape_fail<T>(OpKind::add, "operand shapes differ", {a.shape(), b.shape()});
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int ai = a.id, bi = b.id;
  return a.graph->record(OpKind::add, {ai, bi}, std::move(out),
                         [ai, bi](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
                           if (gr.requires_grad(ai)) grads.add(ai, gout);
                           if (gr.requires_grad(bi)) grads.add(bi, gout);
                         });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  const int xi = x.id;
  return x.graph->record(OpKind::scale, {xi}, std::move(out),
                         [xi, factor](const Graph<T>&, const Tensor<T>& gout, GradMap<T>& grads) {
                           Tensor<T> dx(gout.shape());
                           for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] = gout[i] * factor;
                           grads.add(xi, dx);
                         });
}

// Sum over rows of ||a_n - c_n||_2. The gradient at a_n == c_n is taken as 0.
template <typename T>
Var<T> l2_distance(Var<T> a, Var<T> c) {
  detail::require_same_graph(a, c, OpKind::l2_distance);
  if (a.shape() != c.shape() || a.shape().size() != 2)
    detail::shape_fail<T>(OpKind::l2_distance, "expected two N x D tensors of equal shape", {a.shape(), c.shape()});
  const std::int64_t n = a.shape()[0], d = a.shape()[1];
  std::vector<double> norms(static_cast<std::size_t>(n));
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(a.value()[i * d + j]) - static_cast<double>(c.value()[i * d + j]);
      s += diff * diff;
    }
    norms[i] = std::sqrt(s);
    total += norms[i];
  }
  const int ai = a.id, ci = c.id;
  return a.graph->record(
      OpKind::l2_distance, {ai, ci}, Tensor<T>(Shape{}, std::vector<T>{static_cast<T>(total)}),
      [ai, ci, n, d, norms = std::move(norms)](const Graph<T>& gr, const Tensor<T>& gout, GradMap<T>& grads) {
        const double g = gout[0];
        const auto& av = gr.value(ai);
        const auto& cv = gr.value(ci);
        std::vector<double> da(static_cast<std::size_t>(n * d), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
          if (norms[i] == 0.0) continue;
          for (std::int64_t j = 0; j < d; ++j)
            da[i * d + j] =
                g * (static_cast<double>(av[i * d + j]) - static_cast<double>(cv[i * d + j])) / norms[i];
        }
        if (gr.requires_grad(ai)) grads.add(ai, detail::from_double<T>(av.shape(), da.data()));
        if (gr.requires_grad(ci)) {
          for (auto& v : da) v = -v;
          grads.add(ci, detail::from_double<T>(cv.shape(), da.data()));
        }
      });
}

// Mean over rows of -log softmax(logits_n)[label_n].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  if (s.size() != 2 || static_cast<std::int64_t>(labels.size()) != s[0] || s[0] == 0)
    detail::shape_fail<T>(OpKind::softmax_cross_entropy,
                          detail::cat("expected nonempty N x K logits with N=", labels.size(), " labels"), {s});
  const std::int64_t n = s[0], k = s[1];
  for (int y : labels)
    if (y < 0 || y >= k)
      detail::shape_fail<T>(OpKind::softmax_cross_entropy, detail::cat("label ", y, " outside [0,", k, ")"), {s});
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double total = 0;
  const auto& z = logits.value();
  for (std::int64_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(z[i * k + j]));
    double se = 0;
    for (std::int64_t j = 0; j < k; ++j) se += std::exp(static_cast<double>(z[i * k + j]) - m);
    const double lse = m + std::log(se);
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(static_cast<double>(z[i * k + j]) - lse);
    total += lse - static_cast<double>(z[i * k + labels[i]]);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const int li = logits.id;
  return logits.graph->record(
      OpKind::softmax_cross_entropy, {li}, Tensor<T>(Shape{}, std::vector<T>{static_cast<T>(total / n)}),
      [li, n, k, lab = std::move(lab), probs = std::move(probs)](const Graph<T>&, const Tensor<T>& gout,
                                                                 GradMap<T>& grads) {
        const double g = static_cast<double>(gout[0]) / static_cast<double>(n);
        std::vector<double> dz(probs.size());
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < k; ++j)
            dz[i * k + j] = g * (probs[i * k + j] - (j == lab[i] ? 1.0 : 0.0));
        grads.add(li, detail::from_double<T>(Shape{n, k}, dz.data()));
      });
}

// Sum over rows of logits[n, index_n].
template <typename T>
Var<T> pick_logit(Var<T> logits, std::span<const int> index) {
  const auto& s = logits.shape();
  if (s.size() != 2 || static_cast<std::int64_t>(index.size()) != s[0])
    detail::shape_fail<T>(OpKind::pick_logit, detail::cat("expected N x K logits with N=", index.size(), " indices"),
                          {s});
  const std::int64_t n = s[0], k = s[1];
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (index[i] < 0 || index[i] >= k)
      detail::shape_fail<T>(OpKind::pick_logit, detail::cat("index ", index[i], " outside [0,", k, ")"), {s});
    total += logits.value()[i * k + index[i]];
  }
  std::vector<int> idx(index.begin(), index.end());
  const int li = logits.id;
  return logits.graph->record(OpKind::pick_logit, {li}, Tensor<T>(Shape{}, std::vector<T>{static_cast<T>(total)}),
                              [li, n, k, idx = std::move(idx)](const Graph<T>&, const Tensor<T>& gout,
                                                               GradMap<T>& grads) {
                                Tensor<T> dz(Shape{n, k});
                                for (std::int64_t i = 0; i < n; ++i) dz[i * k + idx[i]] = gout[0];
                                grads.add(li, dz);
                              });
}

// Bilinear resample of NCHW images, align-corners=false. Equal dims copy
// the input unchanged.
template <typename T>
Var<T> bilinear_resize(Var<T> x, std::int64_t out_h, std::int64_t out_w) {
  const Shape xs = x.shape();
  if (xs.size() != 4 || out_h < 1 || out_w < 1 || xs[2] < 1 || xs[3] < 1)
    detail::shape_fail<T>(OpKind::bilinear_resize, detail::cat("cannot resize to ", out_h, "x", out_w), {xs});
  const int xi = x.id;
  if (out_h == xs[2] && out_w == xs[3])
    return x.graph->record(OpKind::bilinear_resize, {xi}, x.value(),
                           [xi](const Graph<T>&, const Tensor<T>& gout, GradMap<T>& grads) { grads.add(xi, gout); });
  const auto ay = detail::resample_axis(xs[2], out_h);
  const auto ax = detail::resample_axis(xs[3], out_w);
  const Shape os{xs[0], xs[1], out_h, out_w};
  Tensor<T> out(os);
  const auto& v = x.value();
  for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc) {
    const T* src = v.data() + nc * xs[2] * xs[3];
    T* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const double fy = ay.frac[i];
      const T* r0 = src + ay.lo[i] * xs[3];
      const T* r1 = src + ay.hi[i] * xs[3];
      for (std::int64_t j = 0; j < out_w; ++j) {
        const double fx = ax.frac[j];
        const double top = (1 - fx) * r0[ax.lo[j]] + fx * r0[ax.hi[j]];
        const double bot = (1 - fx) * r1[ax.lo[j]] + fx * r1[ax.hi[j]];
        dst[i * out_w + j] = static_cast<T>((1 - fy) * top + fy * bot);
      }
    }
  }
  return x.graph->record(
      OpKind::bilinear_resize, {xi}, std::move(out),
      [xi, xs, os, ay, ax](const Graph<T>&, const Tensor<T>& gout, GradMap<T>& grads) {
        std::vector<double> dx(static_cast<std::size_t>(numel(xs)), 0.0);
        for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc) {
          double* d = dx.data() + nc * xs[2] * xs[3];
          const T* g = gout.data() + nc * os[2] * os[3];
          for (std::int64_t i = 0; i < os[2]; ++i) {
            const double fy = ay.frac[i];
            for (std::int64_t j = 0; j < os[3]; ++j) {
              const double fx = ax.frac[j];
              const double gv = g[i * os[3] + j];
              d[ay.lo[i] * xs[3] + ax.lo[j]] += gv * (1 - fy) * (1 - fx);
              d[ay.lo[i] * xs[3] + ax.hi[j]] += gv * (1 - fy) * fx;
              d[ay.hi[i] * xs[3] + ax.lo[j]] += gv * fy * (1 - fx);
              d[ay.hi[i] * xs[3] + ax.hi[j]] += gv * fy * fx;
            }
          }
        }
        grads.add(xi, detail::from_double<T>(xs, dx.data()));
      });
}

// Paste NCHW images onto a zero canvas of out_h x out_w with the source's
// top-left corner at (offset_y, offset_x) (negative offsets crop), then
// optionally mirror the canvas horizontally.
template <typename T>
Var<T> place(Var<T> x, std::int64_t out_h, std::int64_t out_w, std::int64_t offset_y, std::int64_t offset_x,
             bool flip) {
  const Shape xs = x.shape();
  if (xs.size() != 4 || out_h < 1 || out_w < 1)
    detail::shape_fail<T>(OpKind::place, detail::cat("cannot place onto ", out_h, "x", out_w), {xs});
  const Shape os{xs[0], xs[1], out_h, out_w};
  // src[k] is the flat input offset feeding canvas pixel k, or -1 for padding.
  std::vector<std::int64_t> src(static_cast<std::size_t>(out_h * out_w), -1);
  for (std::int64_t i = 0; i < out_h; ++i)
    for (std::int64_t j = 0; j < out_w; ++j) {
      const std::int64_t cj = flip ? out_w - 1 - j : j;
      const std::int64_t si = i - offset_y, sj = cj - offset_x;
      if (si >= 0 && si < xs[2] && sj >= 0 && sj < xs[3]) src[i * out_w + j] = si * xs[3] + sj;
    }
  Tensor<T> out(os);
  const auto& v = x.value();
  for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc)
    for (std::size_t k = 0; k < src.size(); ++k)
      if (src[k] >= 0) out[nc * out_h * out_w + static_cast<std::int64_t>(k)] = v[nc * xs[2] * xs[3] + src[k]];
  const int xi = x.id;
  return x.graph->record(OpKind::place, {xi}, std::move(out),
                         [xi, xs, os, src = std::move(src)](const Graph<T>&, const Tensor<T>& gout,
                                                            GradMap<T>& grads) {
                           Tensor<T> dx(xs);
                           const std::int64_t plane = os[2] * os[3];
                           for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc)
                             for (std::size_t k = 0; k < src.size(); ++k)
                               if (src[k] >= 0)
                                 dx[nc * xs[2] * xs[3] + src[k]] += gout[nc * plane + static_cast<std::int64_t>(k)];
                           grads.add(xi, dx);
                         });
}

}  // namespace rx
