// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "sgir/tensor.hpp"

// Differentiable primitive set. Every op computes its forward value eagerly
// and, when any input is tape-attached, records a backward closure that
// accumulates into the gradients of its attached inputs.
namespace sgir::ops {

namespace impl {

// NumPy-style broadcast of two shapes, with per-output-dimension strides for
// each operand (0 on broadcast dimensions).
struct Broadcast {
  Shape out;
  Shape dims;  // out with contiguous runs merged
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  auto sa = row_major_strides(a), sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ia = i + a.size(), ib = i + b.size();
    std::size_t ea = ia >= r ? a[ia - r] : 1, eb = ib >= r ? b[ib - r] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    p.out[i] = std::max(ea, eb);
    if (ia >= r && ea != 1) p.stride_a[i] = sa[ia - r];
    if (ib >= r && eb != 1) p.stride_b[i] = sb[ib - r];
  }
  // merge adjacent dimensions that both operands traverse contiguously
  Broadcast q;
  q.dims = {p.out[0]};
  q.stride_a = {p.stride_a[0]};
  q.stride_b = {p.stride_b[0]};
  for (std::size_t i = 1; i < r; ++i) {
    std::size_t e = p.out[i];
    if (q.stride_a.back() == p.stride_a[i] * e && q.stride_b.back() == p.stride_b[i] * e) {
      q.dims.back() *= e;
      q.stride_a.back() = p.stride_a[i];
      q.stride_b.back() = p.stride_b[i];
    } else {
      q.dims.push_back(e);
      q.stride_a.push_back(p.stride_a[i]);
      q.stride_b.push_back(p.stride_b[i]);
    }
  }
  q.out = p.out;
  return q;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::size_t n = shape_size(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t r = p.dims.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t inner = p.dims[r - 1], ia = 0, ib = 0;
  std::size_t sa = p.stride_a[r - 1], sb = p.stride_b[r - 1];
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ia + k * sa, ib + k * sb);
    // advance odometer over the outer dimensions
    for (std::size_t d = r - 1; d-- > 0;) {
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (++idx[d] < p.dims[d]) break;
      ia -= p.stride_a[d] * p.dims[d];
      ib -= p.stride_b[d] * p.dims[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class Deriv>
Tensor unary(const char* kind, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> y(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xd[i]);
  Tensor out(x.shape(), std::move(y));
  if (!x.attached()) return out;
  return record_op(kind, {&x}, out, [x, out, deriv](std::span<const double> g, GradInputs& gin) {
    auto xd = x.data();
    auto yd = out.data();
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xd[i], yd[i]);
  });
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(axis);
}

}  // namespace impl

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting.

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto p = impl::broadcast(a.shape(), b.shape(), "add");
  std::vector<double> y(shape_size(p.out));
  auto ad = a.data(), bd = b.data();
  impl::for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = ad[i] + bd[j]; });
  Tensor out(p.out, std::move(y));
  if (!a.attached() && !b.attached()) return out;
  return record_op("add", {&a, &b}, out, [p](std::span<const double> g, GradInputs& gin) {
    auto* ga = gin[0];
    auto* gb = gin[1];
    impl::for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) (*ga)[i] += g[o];
      if (gb) (*gb)[j] += g[o];
    });
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto p = impl::broadcast(a.shape(), b.shape(), "mul");
  std::vector<double> y(shape_size(p.out));
  auto ad = a.data(), bd = b.data();
  impl::for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = ad[i] * bd[j]; });
  Tensor out(p.out, std::move(y));
  if (!a.attached() && !b.attached()) return out;
  return record_op("mul", {&a, &b}, out, [a, b, p](std::span<const double> g, GradInputs& gin) {
    auto* ga = gin[0];
    auto* gb = gin[1];
    auto ad = a.data(), bd = b.data();
    impl::for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) (*ga)[i] += g[o] * bd[j];
      if (gb) (*gb)[j] += g[o] * ad[i];
    });
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return impl::unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor shift(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.

inline Tensor tanh(const Tensor& x) {
  return impl::unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
  return impl::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(v));
  return impl::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// x^p for a constant exponent. Non-integer exponents need x > 0; negative
// integer exponents need x != 0.
inline Tensor power(const Tensor& x, double p) {
  bool integral = std::floor(p) == p;
  for (double v : x.data()) {
    bool ok = integral ? (p >= 0.0 || v != 0.0) : v > 0.0;
    if (!ok || !std::isfinite(v))
      throw DomainError("power: base " + std::to_string(v) + " outside domain for exponent " + std::to_string(p));
  }
  return impl::unary(
      "power", x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

inline Tensor max_with_zero(const Tensor& x) {
  return impl::unary(
      "max_with_zero", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return impl::unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (!x.attached()) return out;
  return record_op("sum", {&x}, out, [](std::span<const double> g, GradInputs& gin) {
    for (auto& v : *gin[0]) v += g[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Sum over one axis, removing it.
inline Tensor sum(const Tensor& x, long axis_in) {
  auto axis = impl::normalize_axis(axis_in, x.rank(), "sum");
  const Shape& s = x.shape();
  std::size_t outer = shape_size(Shape(s.begin(), s.begin() + static_cast<long>(axis)));
  std::size_t n = s[axis];
  std::size_t inner = shape_size(Shape(s.begin() + static_cast<long>(axis) + 1, s.end()));
  Shape os = s;
  os.erase(os.begin() + static_cast<long>(axis));
  std::vector<double> y(outer * inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = &xd[(o * n + k) * inner];
      double* dst = &y[o * inner];
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Tensor out(os, std::move(y));
  if (!x.attached()) return out;
  return record_op("sum", {&x}, out, [outer, n, inner](std::span<const double> g, GradInputs& gin) {
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
  });
}

inline Tensor mean(const Tensor& x, long axis) {
  auto a = impl::normalize_axis(axis, x.rank(), "mean");
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(a)));
}

// ---------------------------------------------------------------------------
// Layout ops.

inline Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (!x.attached()) return out;
  return record_op("reshape", {&x}, out, [](std::span<const double> g, GradInputs& gin) {
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = x.dim(perm[i]);
  auto in_st = impl::row_major_strides(x.shape());
  // out index -> in index via strides permuted into output order
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) st[i] = in_st[perm[i]];
  std::size_t n = x.size();
  std::vector<std::size_t> map(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
      map[o] = src;
      for (std::size_t d = r; d-- > 0;) {
        src += st[d];
        if (++idx[d] < os[d]) break;
        src -= st[d] * os[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> y(n);
  auto xd = x.data();
  for (std::size_t o = 0; o < n; ++o) y[o] = xd[map[o]];
  Tensor out(os, std::move(y));
  if (!x.attached()) return out;
  return record_op("transpose", {&x}, out,
                   [map = std::move(map)](std::span<const double> g, GradInputs& gin) {
                     auto& gx = *gin[0];
                     for (std::size_t o = 0; o < g.size(); ++o) gx[map[o]] += g[o];
                   });
}

inline Tensor concat(const std::vector<Tensor>& xs, long axis_in) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  auto axis = impl::normalize_axis(axis_in, xs[0].rank(), "concat");
  Shape os = xs[0].shape();
  os[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != os.size()) throw ShapeError("concat: rank mismatch " + shape_str(t.shape()));
    for (std::size_t d = 0; d < os.size(); ++d)
      if (d != axis && t.dim(d) != xs[0].dim(d))
        throw ShapeError("concat: shapes " + shape_str(xs[0].shape()) + " and " + shape_str(t.shape()) +
                         " disagree off-axis");
    os[axis] += t.dim(axis);
  }
  std::size_t outer = shape_size(Shape(os.begin(), os.begin() + static_cast<long>(axis)));
  std::size_t inner = shape_size(Shape(os.begin() + static_cast<long>(axis) + 1, os.end()));
  std::size_t row = os[axis] * inner;
  std::vector<double> y(outer * row);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    std::size_t w = t.dim(axis) * inner;
    auto td = t.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(&td[o * w], w, &y[o * row + off]);
    off += w;
  }
  Tensor out(os, std::move(y));
  std::vector<const Tensor*> ins;
  bool any = false;
  for (const auto& t : xs) {
    ins.push_back(&t);
    any = any || t.attached();
  }
  if (!any) return out;
  std::vector<std::size_t> widths;
  for (const auto& t : xs) widths.push_back(t.dim(axis) * inner);
  return record_op("concat", ins, out, [outer, row, offsets, widths](std::span<const double> g, GradInputs& gin) {
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (!gin[k]) continue;
      auto& gx = *gin[k];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < widths[k]; ++i) gx[o * widths[k] + i] += g[o * row + offsets[k] + i];
    }
  });
}

// Half-open range [begin, end) along one axis.
inline Tensor slice(const Tensor& x, long axis_in, std::size_t begin, std::size_t end) {
  auto axis = impl::normalize_axis(axis_in, x.rank(), "slice");
  if (begin >= end || end > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = shape_size(Shape(s.begin(), s.begin() + static_cast<long>(axis)));
  std::size_t inner = shape_size(Shape(s.begin() + static_cast<long>(axis) + 1, s.end()));
  std::size_t row = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  Shape os = s;
  os[axis] = end - begin;
  std::vector<double> y(outer * w);
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(&xd[o * row + off], w, &y[o * w]);
  Tensor out(os, std::move(y));
  if (!x.attached()) return out;
  return record_op("slice", {&x}, out, [outer, row, w, off](std::span<const double> g, GradInputs& gin) {
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < w; ++i) gx[o * row + off + i] += g[o * w + i];
  });
}

// ---------------------------------------------------------------------------
// Last-dimension normalizations.

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim: scalar input");
  std::size_t n = x.shape().back(), rows = x.size() / n;
  std::vector<double> y(x.size());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xd[r * n];
    double* out = &y[r * n];
    double m = *std::max_element(in, in + n), s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (out[i] = std::exp(in[i] - m));
    for (std::size_t i = 0; i < n; ++i) out[i] /= s;
  }
  Tensor out(x.shape(), std::move(y));
  if (!x.attached()) return out;
  return record_op("softmax_lastdim", {&x}, out, [out, n, rows](std::span<const double> g, GradInputs& gin) {
    auto yd = out.data();
    auto& gx = *gin[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * yd[r * n + i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yd[r * n + i] * (g[r * n + i] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Zero-mean, unit-variance over the last dimension (no affine part).
inline Tensor layer_norm(const Tensor& x, double eps = kLayerNormEps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  std::size_t n = x.shape().back(), rows = x.size() / n;
  std::vector<double> y(x.size()), inv_std(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xd[r * n];
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (in[i] - mu) * inv_std[r];
  }
  Tensor out(x.shape(), std::move(y));
  if (!x.attached()) return out;
  return record_op("layer_norm", {&x}, out,
                   [out, n, rows, inv_std = std::move(inv_std)](std::span<const double> g, GradInputs& gin) {
                     auto yd = out.data();
                     auto& gx = *gin[0];
                     double dn = static_cast<double>(n);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mg = 0.0, mgy = 0.0;
                       for (std::size_t i = 0; i < n; ++i) {
                         mg += g[r * n + i];
                         mgy += g[r * n + i] * yd[r * n + i];
                       }
                       mg /= dn;
                       mgy /= dn;
                       for (std::size_t i = 0; i < n; ++i)
                         gx[r * n + i] += inv_std[r] * (g[r * n + i] - mg - yd[r * n + i] * mgy);
                     }
                   });
}

inline constexpr double kNormalizeEps = 1e-12;

// x / max(|x|, eps) over the last dimension.
inline Tensor normalize_lastdim(const Tensor& x, double eps = kNormalizeEps) {
  if (x.rank() == 0) throw ShapeError("normalize_lastdim: scalar input");
  std::size_t n = x.shape().back(), rows = x.size() / n;
  std::vector<double> y(x.size()), norms(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xd[r * n + i] * xd[r * n + i];
    norms[r] = std::sqrt(s);
    double d = std::max(norms[r], eps);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = xd[r * n + i] / d;
  }
  Tensor out(x.shape(), std::move(y));
  if (!x.attached()) return out;
  return record_op("normalize_lastdim", {&x}, out,
                   [out, n, rows, eps, norms = std::move(norms)](std::span<const double> g, GradInputs& gin) {
                     auto yd = out.data();
                     auto& gx = *gin[0];
                     for (std::size_t r = 0; r < rows; ++r) {
                       if (norms[r] <= eps) {
                         for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[r * n + i] / eps;
                         continue;
                       }
                       double dot = 0.0;
                       for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * yd[r * n + i];
                       for (std::size_t i = 0; i < n; ++i)
                         gx[r * n + i] += (g[r * n + i] - yd[r * n + i] * dot) / norms[r];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Linear algebra.

// a: (..., M, K). b: (K, N) shared across the batch, or (..., K, N) with
// the same leading extents as a. Result: (..., M, N).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::size_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
  std::size_t Kb = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
  bool shared = b.rank() == 2;
  Shape batch(a.shape().begin(), a.shape().end() - 2);
  if (K != Kb || (!shared && Shape(b.shape().begin(), b.shape().end() - 2) != batch))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::size_t B = shape_size(batch);
  Shape os = batch;
  os.push_back(M);
  os.push_back(N);
  std::vector<double> y(B * M * N, 0.0);
  auto ad = a.data(), bd = b.data();
  for (std::size_t t = 0; t < B; ++t) {
    const double* A = &ad[t * M * K];
    const double* Bm = &bd[shared ? 0 : t * K * N];
    double* C = &y[t * M * N];
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        double av = A[i * K + k];
        const double* brow = &Bm[k * N];
        double* crow = &C[i * N];
        for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
  }
  Tensor out(os, std::move(y));
  if (!a.attached() && !b.attached()) return out;
  return record_op("matmul", {&a, &b}, out, [a, b, B, M, K, N, shared](std::span<const double> g, GradInputs& gin) {
    auto ad = a.data(), bd = b.data();
    for (std::size_t t = 0; t < B; ++t) {
      const double* G = &g[t * M * N];
      const double* A = &ad[t * M * K];
      const double* Bm = &bd[shared ? 0 : t * K * N];
      if (gin[0]) {
        double* GA = &(*gin[0])[t * M * K];
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) s += G[i * N + j] * Bm[k * N + j];
            GA[i * K + k] += s;
          }
      }
      if (gin[1]) {
        double* GB = &(*gin[1])[shared ? 0 : t * K * N];
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            double av = A[i * K + k];
            for (std::size_t j = 0; j < N; ++j) GB[k * N + j] += av * G[i * N + j];
          }
      }
    }
  });
}

// x: (B, H, W, Cin) channels-last. w: (kh, kw, Cin, Cout). Zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(3) != w.dim(2))
    throw ShapeError("conv2d: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  std::size_t kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(B * Ho * Wo * Co, 0.0);
  auto xd = x.data(), wd = w.data();
  auto for_taps = [=](auto&& body) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          std::size_t o = ((b * Ho + oy) * Wo + ox) * Co;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              std::size_t i = ((b * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Ci;
              std::size_t k = (ky * kw + kx) * Ci * Co;
              body(o, i, k);
            }
          }
        }
  };
  for_taps([&](std::size_t o, std::size_t i, std::size_t k) {
    double* out = &y[o];
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      double xv = xd[i + ci];
      const double* wr = &wd[k + ci * Co];
      for (std::size_t co = 0; co < Co; ++co) out[co] += xv * wr[co];
    }
  });
  Tensor out(Shape{B, Ho, Wo, Co}, std::move(y));
  if (!x.attached() && !w.attached()) return out;
  return record_op("conv2d", {&x, &w}, out, [x, w, for_taps, Ci, Co](std::span<const double> g, GradInputs& gin) {
    auto xd = x.data(), wd = w.data();
    double* gx = gin[0] ? gin[0]->data() : nullptr;
    double* gw = gin[1] ? gin[1]->data() : nullptr;
    for_taps([&](std::size_t o, std::size_t i, std::size_t k) {
      const double* go = &g[o];
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        if (gx) {
          const double* wr = &wd[k + ci * Co];
          double s = 0.0;
          for (std::size_t co = 0; co < Co; ++co) s += go[co] * wr[co];
          gx[i + ci] += s;
        }
        if (gw) {
          double xv = xd[i + ci];
          double* gwr = &gw[k + ci * Co];
          for (std::size_t co = 0; co < Co; ++co) gwr[co] += xv * go[co];
        }
      }
    });
  });
}

// 2x bilinear upsampling of (B, H, W, C), half-pixel centers with edge
// clamping (align_corners = false).
inline Tensor bilinear_upsample_2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("bilinear_upsample_2x: expected (B,H,W,C), got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t n) {
    std::vector<Tap> t(2 * n);
    for (std::size_t o = 0; o < 2 * n; ++o) {
      double src = std::max((static_cast<double>(o) + 0.5) / 2.0 - 0.5, 0.0);
      auto i0 = std::min(static_cast<std::size_t>(src), n - 1);
      t[o] = {i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = taps(H), tx = taps(W);
  std::size_t Ho = 2 * H, Wo = 2 * W;
  auto visit = [=](auto&& f) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const Tap& a = ty[oy];
          const Tap& c = tx[ox];
          std::size_t o = ((b * Ho + oy) * Wo + ox) * C;
          std::size_t base = b * H * W;
          std::array<std::size_t, 4> src = {(base + a.i0 * W + c.i0) * C, (base + a.i0 * W + c.i1) * C,
                                            (base + a.i1 * W + c.i0) * C, (base + a.i1 * W + c.i1) * C};
          std::array<double, 4> wt = {(1 - a.w1) * (1 - c.w1), (1 - a.w1) * c.w1, a.w1 * (1 - c.w1), a.w1 * c.w1};
          f(o, src, wt);
        }
  };
  std::vector<double> y(B * Ho * Wo * C, 0.0);
  auto xd = x.data();
  visit([&](std::size_t o, const std::array<std::size_t, 4>& src, const std::array<double, 4>& wt) {
    for (int q = 0; q < 4; ++q)
      for (std::size_t ch = 0; ch < C; ++ch) y[o + ch] += wt[q] * xd[src[q] + ch];
  });
  Tensor out(Shape{B, Ho, Wo, C}, std::move(y));
  if (!x.attached()) return out;
  return record_op("bilinear_upsample_2x", {&x}, out, [visit, C](std::span<const double> g, GradInputs& gin) {
    auto& gx = *gin[0];
    visit([&](std::size_t o, const std::array<std::size_t, 4>& src, const std::array<double, 4>& wt) {
      for (int q = 0; q < 4; ++q)
        for (std::size_t ch = 0; ch < C; ++ch) gx[src[q] + ch] += wt[q] * g[o + ch];
    });
  });
}

// ---------------------------------------------------------------------------
// Small compositions used throughout.

inline Tensor square(const Tensor& x) { return mul(x, x); }

// max(x, lo) = lo + relu(x - lo)
inline Tensor clamp_min(const Tensor& x, double lo) { return shift(max_with_zero(shift(x, -lo)), lo); }

// clamp(x, lo, hi) = lo + relu(x - lo) - relu(x - hi)
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return shift(sub(max_with_zero(shift(x, -lo)), max_with_zero(shift(x, -hi))), lo);
}

inline Tensor div(const Tensor& a, const Tensor& b) { return mul(a, power(b, -1.0)); }

}  // namespace sgir::ops
