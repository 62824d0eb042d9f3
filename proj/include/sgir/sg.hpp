// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sgir/ops.hpp"
#include "sgir/tensor.hpp"
#include "sgir/vec3.hpp"

namespace sgir {

inline constexpr std::size_t kNumLobes = 12;
inline constexpr std::size_t kGridTheta = 16;
inline constexpr std::size_t kGridPhi = 32;
inline constexpr std::size_t kGridSize = kGridTheta * kGridPhi;

// One spherical-Gaussian lobe: axis xi (unit), bandwidth lam >= 0, RGB
// intensity f >= 0. G(eta) = f * exp(lam * (eta . xi - 1)).
struct SGLobe {
  Vec3 xi{0.0, 0.0, 1.0};
  double lam = 0.0;
  Vec3 f{0.0, 0.0, 0.0};

  void validate() const {
    if (std::abs(length(xi) - 1.0) > 1e-6) throw DomainError("sg lobe: axis is not unit length");
    if (!(lam >= 0.0)) throw DomainError("sg lobe: negative bandwidth");
    for (double c : f)
      if (!(c >= 0.0)) throw DomainError("sg lobe: negative intensity");
  }
};

inline Vec3 sg_eval(std::span<const SGLobe> lobes, const Vec3& eta) {
  if (std::abs(length(eta) - 1.0) > 1e-4) throw DomainError("sg_eval: direction is not unit length");
  Vec3 out{0.0, 0.0, 0.0};
  for (const auto& l : lobes) out = out + std::exp(l.lam * (dot(eta, l.xi) - 1.0)) * l.f;
  return out;
}

// Differentiable form: xi (K,3) is normalized first, lam (K), f (K,3),
// eta a unit 3-vector. Returns (3).
inline Tensor sg_eval(const Tensor& xi, const Tensor& lam, const Tensor& f, const Vec3& eta) {
  using namespace ops;
  std::size_t K = lam.size();
  if (xi.shape() != Shape{K, 3} || f.shape() != Shape{K, 3} || lam.shape() != Shape{K})
    throw ShapeError("sg_eval: expected xi (K,3), lam (K), f (K,3)");
  if (std::abs(length(eta) - 1.0) > 1e-4) throw DomainError("sg_eval: direction is not unit length");
  Tensor e({3, 1}, {eta[0], eta[1], eta[2]});
  Tensor c = matmul(normalize_lastdim(xi), e);                           // (K,1)
  Tensor w = exp(mul(reshape(lam, {K, 1}), shift(c, -1.0)));             // (K,1)
  return sum(mul(f, w), 0);
}

// Midpoint grid over the upper hemisphere of the local frame (z = normal).
struct DirectionGrid {
  std::vector<Vec3> dirs;       // theta-major, kGridTheta x kGridPhi
  std::vector<double> domega;   // steradians per texel

  static double theta(std::size_t i) { return (static_cast<double>(i) + 0.5) * (std::numbers::pi / 2.0) / kGridTheta; }
  static double phi(std::size_t j) { return (static_cast<double>(j) + 0.5) * (2.0 * std::numbers::pi) / kGridPhi; }

  // (kGridSize, 3)
  Tensor dirs_tensor() const {
    std::vector<double> d;
    d.reserve(kGridSize * 3);
    for (const auto& v : dirs) d.insert(d.end(), v.begin(), v.end());
    return Tensor({kGridSize, 3}, std::move(d));
  }
  Tensor domega_tensor() const { return Tensor({kGridSize}, domega); }
};

inline DirectionGrid build_direction_grid() {
  DirectionGrid g;
  double dtheta = (std::numbers::pi / 2.0) / kGridTheta, dphi = 2.0 * std::numbers::pi / kGridPhi;
  for (std::size_t i = 0; i < kGridTheta; ++i)
    for (std::size_t j = 0; j < kGridPhi; ++j) {
      double t = DirectionGrid::theta(i), p = DirectionGrid::phi(j);
      g.dirs.push_back({std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)});
      g.domega.push_back(std::sin(t) * dtheta * dphi);
    }
  return g;
}

inline const DirectionGrid& direction_grid() {
  static const DirectionGrid g = build_direction_grid();
  return g;
}

// Orthonormal right-handed shading frame (t, b, n).
struct Frame {
  Vec3 t, b, n;
  Vec3 to_world(const Vec3& local) const { return local[0] * t + local[1] * b + local[2] * n; }
  Vec3 to_local(const Vec3& world) const { return {dot(world, t), dot(world, b), dot(world, n)}; }
};

// True when the frame construction must fall back to u = (1,0,0).
inline bool frame_uses_fallback(const Vec3& n) { return std::abs(n[1]) > 0.999; }

inline Frame local_frame(const Vec3& n) {
  if (std::abs(length(n) - 1.0) > 1e-6) throw DomainError("local_frame: normal is not unit length");
  Vec3 u = frame_uses_fallback(n) ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  Vec3 t = normalize(cross(u, n));
  return {t, cross(n, t), n};
}

namespace detail {

inline void check_sg_shapes(const Tensor& xi, const Tensor& lam, const Tensor& f, Shape& lead, std::size_t& K) {
  if (lam.rank() < 1) throw ShapeError("rasterize_sg: lam must have a lobe axis");
  K = lam.shape().back();
  lead.assign(lam.shape().begin(), lam.shape().end() - 1);
  Shape v = lead;
  v.push_back(K);
  v.push_back(3);
  if (xi.shape() != v || f.shape() != v)
    throw ShapeError("rasterize_sg: shapes " + shape_str(xi.shape()) + ", " + shape_str(lam.shape()) + ", " +
                     shape_str(f.shape()) + " do not agree");
}

}  // namespace detail

// Per-pixel environment maps from per-pixel SG parameters. xi (...,K,3)
// holds local-frame unit axes, lam (...,K), f (...,K,3). Output
// (...,16,32,3). Recorded as a single fused node: the (pixels x lobes x
// texels) intermediate is recomputed in the backward pass instead of being
// stored.
inline Tensor rasterize_sg(const Tensor& xi, const Tensor& lam, const Tensor& f) {
  Shape lead;
  std::size_t K = 0;
  detail::check_sg_shapes(xi, lam, f, lead, K);
  std::size_t P = shape_size(lead);
  const auto& grid = direction_grid();
  std::vector<double> dx(kGridSize), dy(kGridSize), dz(kGridSize);
  for (std::size_t q = 0; q < kGridSize; ++q) {
    dx[q] = grid.dirs[q][0];
    dy[q] = grid.dirs[q][1];
    dz[q] = grid.dirs[q][2];
  }
  Shape os = lead;
  os.insert(os.end(), {kGridTheta, kGridPhi, 3});
  std::vector<double> out(P * kGridSize * 3, 0.0);
  std::vector<double> e(kGridSize);
  auto xd = xi.data(), ld = lam.data(), fd = f.data();
  for (std::size_t p = 0; p < P; ++p) {
    double* L = &out[p * kGridSize * 3];
    for (std::size_t k = 0; k < K; ++k) {
      const double* x = &xd[(p * K + k) * 3];
      const double* fk = &fd[(p * K + k) * 3];
      double l = ld[p * K + k];
      for (std::size_t q = 0; q < kGridSize; ++q) e[q] = std::exp(l * (x[0] * dx[q] + x[1] * dy[q] + x[2] * dz[q] - 1.0));
      for (std::size_t q = 0; q < kGridSize; ++q) {
        L[q * 3 + 0] += fk[0] * e[q];
        L[q * 3 + 1] += fk[1] * e[q];
        L[q * 3 + 2] += fk[2] * e[q];
      }
    }
  }
  Tensor result(os, std::move(out));
  if (!xi.attached() && !lam.attached() && !f.attached()) return result;
  return record_op("rasterize_sg", {&xi, &lam, &f}, result,
                   [xi, lam, f, P, K, dx, dy, dz](std::span<const double> g, GradInputs& gin) {
                     auto xd = xi.data(), ld = lam.data(), fd = f.data();
                     std::vector<double> e(kGridSize);
                     for (std::size_t p = 0; p < P; ++p) {
                       const double* G = &g[p * kGridSize * 3];
                       for (std::size_t k = 0; k < K; ++k) {
                         std::size_t pk = p * K + k;
                         const double* x = &xd[pk * 3];
                         const double* fk = &fd[pk * 3];
                         double l = ld[pk];
                         double gl = 0.0, gx0 = 0.0, gx1 = 0.0, gx2 = 0.0, gf0 = 0.0, gf1 = 0.0, gf2 = 0.0;
                         for (std::size_t q = 0; q < kGridSize; ++q) {
                           double c = x[0] * dx[q] + x[1] * dy[q] + x[2] * dz[q];
                           double ev = std::exp(l * (c - 1.0));
                           double s = fk[0] * G[q * 3] + fk[1] * G[q * 3 + 1] + fk[2] * G[q * 3 + 2];
                           double ge = s * ev;
                           gl += ge * (c - 1.0);
                           gx0 += ge * dx[q];
                           gx1 += ge * dy[q];
                           gx2 += ge * dz[q];
                           gf0 += ev * G[q * 3];
                           gf1 += ev * G[q * 3 + 1];
                           gf2 += ev * G[q * 3 + 2];
                         }
                         if (gin[0]) {
                           (*gin[0])[pk * 3 + 0] += gx0 * l;
                           (*gin[0])[pk * 3 + 1] += gx1 * l;
                           (*gin[0])[pk * 3 + 2] += gx2 * l;
                         }
                         if (gin[1]) (*gin[1])[pk] += gl;
                         if (gin[2]) {
                           (*gin[2])[pk * 3 + 0] += gf0;
                           (*gin[2])[pk * 3 + 1] += gf1;
                           (*gin[2])[pk * 3 + 2] += gf2;
                         }
                       }
                     }
                   });
}

// Same map assembled from primitive ops (matmul, exp, mul, sum). Holds the
// full (pixels x lobes x texels) intermediate on the tape, so it is only
// used as an independent check of the fused node at small sizes.
inline Tensor rasterize_sg_composed(const Tensor& xi, const Tensor& lam, const Tensor& f) {
  using namespace ops;
  Shape lead;
  std::size_t K = 0;
  detail::check_sg_shapes(xi, lam, f, lead, K);
  std::size_t P = shape_size(lead);
  Tensor dirs_t = transpose(direction_grid().dirs_tensor(), {1, 0});                 // (3, Q)
  Tensor c = matmul(reshape(xi, {P, K, 3}), dirs_t);                                 // (P, K, Q)
  Tensor e = exp(mul(shift(c, -1.0), reshape(lam, {P, K, 1})));                       // (P, K, Q)
  Tensor L = matmul(transpose(e, {0, 2, 1}), reshape(f, {P, K, 3}));                 // (P, Q, 3)
  Shape os = lead;
  os.insert(os.end(), {kGridTheta, kGridPhi, 3});
  return reshape(L, os);
}

// Overload that also checks the normals the maps are attached to.
inline Tensor rasterize_sg(const Tensor& xi, const Tensor& lam, const Tensor& f, const Tensor& normals) {
  Shape lead(lam.shape().begin(), lam.shape().end() - 1);
  Shape ns = lead;
  ns.push_back(3);
  if (normals.shape() != ns)
    throw ShapeError("rasterize_sg: normals " + shape_str(normals.shape()) + " do not match lighting " +
                     shape_str(lam.shape()));
  return rasterize_sg(xi, lam, f);
}

// Per-pixel SG set packed as (...,K,7): xi (3), lam (1), f (3).
inline Tensor pack_sg(const Tensor& xi, const Tensor& lam, const Tensor& f) {
  Shape ls = lam.shape();
  ls.push_back(1);
  return ops::concat({xi, ops::reshape(lam, ls), f}, -1);
}

}  // namespace sgir
