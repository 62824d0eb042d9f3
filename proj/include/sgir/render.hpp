// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sgir/camera.hpp"
#include "sgir/ops.hpp"
#include "sgir/sg.hpp"

namespace sgir {

struct ShadingConfig {
  double f0 = 0.05;
  bool diffuse_only = false;
  double clamp_eps = 1e-6;

  void validate() const {
    if (!(f0 >= 0.0 && f0 <= 1.0)) throw ValidationError("shading: f0 must lie in [0,1]");
    if (!(clamp_eps > 0.0)) throw ValidationError("shading: clamp_eps must be positive");
  }
};

// Floor on alpha^2 so the GGX lobe stays finite for perfectly smooth
// surfaces.
inline constexpr double kMinAlpha2 = 1e-10;

// Specular microfacet factor D*F*G / (4 (n.wi)(n.wo)), GGX distribution with
// alpha = R^2, Schlick Fresnel, Smith-Schlick visibility with k = alpha^2/2.
inline double microfacet_specular(const Vec3& n, const Vec3& wi, const Vec3& wo, double roughness,
                                  const ShadingConfig& cfg) {
  double nl = dot(n, wi), nv = dot(n, wo);
  if (nl <= 0.0 || nv <= 0.0) return 0.0;
  Vec3 h = normalize(wi + wo);
  double nh = dot(n, h), hv = dot(h, wo);
  double a = roughness * roughness, a2 = std::max(a * a, kMinAlpha2);
  double den = nh * nh * (a2 - 1.0) + 1.0;
  double D = a2 / (std::numbers::pi * den * den);
  double F = cfg.f0 + (1.0 - cfg.f0) * std::pow(1.0 - hv, 5.0);
  double k = a2 / 2.0;
  double cl = std::max(nl, cfg.clamp_eps), cv = std::max(nv, cfg.clamp_eps);
  double G = cl / (cl * (1.0 - k) + k) * (cv / (cv * (1.0 - k) + k));
  return D * F * G / (4.0 * cl * cv);
}

inline Vec3 microfacet_brdf(const Vec3& n, const Vec3& wi, const Vec3& wo, const Vec3& albedo, double roughness,
                            const ShadingConfig& cfg = {}) {
  for (double a : albedo)
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("microfacet_brdf: albedo outside [0,1]");
  if (!(roughness >= 0.0 && roughness <= 1.0)) throw DomainError("microfacet_brdf: roughness outside [0,1]");
  if (dot(n, wi) <= 0.0 || dot(n, wo) <= 0.0) return {0.0, 0.0, 0.0};
  double s = cfg.diffuse_only ? 0.0 : microfacet_specular(n, wi, wo, roughness, cfg);
  return {albedo[0] / std::numbers::pi + s, albedo[1] / std::numbers::pi + s, albedo[2] / std::numbers::pi + s};
}

// Outgoing radiance toward `wo` for a surface with normal n lit by radiance
// arriving from `dirs` (world space) with solid angles `domega`.
inline Vec3 shade_point(const Vec3& n, const Vec3& wo, const Vec3& albedo, double roughness,
                        std::span<const Vec3> dirs, std::span<const Vec3> radiance, std::span<const double> domega,
                        const ShadingConfig& cfg = {}) {
  Vec3 out{0.0, 0.0, 0.0};
  for (std::size_t q = 0; q < dirs.size(); ++q) {
    double c = dot(n, dirs[q]);
    if (c <= 0.0) continue;
    Vec3 f = microfacet_brdf(n, dirs[q], wo, albedo, roughness, cfg);
    for (int ch = 0; ch < 3; ++ch) out[ch] += f[ch] * radiance[q][ch] * c * domega[q];
  }
  return out;
}

namespace detail {

// a x b over the last axis of (P,3) tensors.
inline Tensor cross_lastdim(const Tensor& a, const Tensor& b) {
  using namespace ops;
  auto c = [](const Tensor& t, std::size_t i) { return slice(t, -1, i, i + 1); };
  return concat({sub(mul(c(a, 1), c(b, 2)), mul(c(a, 2), c(b, 1))),
                 sub(mul(c(a, 2), c(b, 0)), mul(c(a, 0), c(b, 2))),
                 sub(mul(c(a, 0), c(b, 1)), mul(c(a, 1), c(b, 0)))},
                -1);
}

inline Tensor dot_lastdim(const Tensor& a, const Tensor& b) {
  Shape s = a.shape();
  s.back() = 1;
  return ops::reshape(ops::sum(ops::mul(a, b), -1), s);
}

}  // namespace detail

// Per-texel shading weights W (P, 512, 3) such that the rendered radiance is
// sum_q W[p,q,:] * L[p,q,:]. Differentiable in N (pre-normalization), A, R.
// N (P,3), A (P,3), R (P,1), view (P,3) unit vectors from surface to camera.
inline Tensor render_weights(const Tensor& normals, const Tensor& albedo, const Tensor& roughness, const Tensor& view,
                             const ShadingConfig& cfg) {
  using namespace ops;
  cfg.validate();
  std::size_t P = normals.dim(0);
  const auto& grid = direction_grid();

  Tensor n = normalize_lastdim(normals);
  // local_frame() per pixel, branch chosen by value
  std::vector<double> m_main(P), m_fall(P);
  auto nd = n.data();
  for (std::size_t p = 0; p < P; ++p) {
    bool fb = frame_uses_fallback({nd[p * 3], nd[p * 3 + 1], nd[p * 3 + 2]});
    m_main[p] = fb ? 0.0 : 1.0;
    m_fall[p] = fb ? 1.0 : 0.0;
  }
  // u x n for u = (0,1,0) -> (n_z, 0, -n_x); u = (1,0,0) -> (0, -n_z, n_y)
  Tensor cross_main({3, 3}, {0, 0, -1, 0, 0, 0, 1, 0, 0});
  Tensor cross_fall({3, 3}, {0, 0, 0, 0, 0, 1, 0, -1, 0});
  Tensor t_raw = add(mul(matmul(n, cross_main), Tensor({P, 1}, m_main)),
                     mul(matmul(n, cross_fall), Tensor({P, 1}, m_fall)));
  Tensor t = normalize_lastdim(t_raw);
  Tensor b = detail::cross_lastdim(n, t);

  Tensor v = normalize_lastdim(view);
  Tensor nv = detail::dot_lastdim(n, v);                                          // (P,1)
  Tensor v_local = concat({detail::dot_lastdim(t, v), detail::dot_lastdim(b, v), nv}, -1);
  Tensor dirs_t = transpose(grid.dirs_tensor(), {1, 0});                          // (3,Q)
  std::vector<double> cos_theta(kGridSize), cos_domega(kGridSize);
  for (std::size_t q = 0; q < kGridSize; ++q) {
    cos_theta[q] = grid.dirs[q][2];
    cos_domega[q] = grid.dirs[q][2] * grid.domega[q];
  }
  Tensor nl({1, kGridSize}, cos_theta);
  Tensor cdw({1, kGridSize, 1}, cos_domega);

  // pixels whose normal faces away from the camera reflect nothing
  std::vector<double> visible(P);
  auto nvd = nv.data();
  for (std::size_t p = 0; p < P; ++p) visible[p] = nvd[p] > 0.0 ? 1.0 : 0.0;
  Tensor vis({P, 1, 1}, visible);

  Tensor diffuse = scale(reshape(albedo, {P, 1, 3}), 1.0 / std::numbers::pi);
  Tensor f;
  if (cfg.diffuse_only) {
    f = diffuse;
  } else {
    Tensor io = matmul(v_local, dirs_t);                                          // wi.wo (P,Q)
    Tensor hl = power(clamp_min(shift(scale(io, 2.0), 2.0), 1e-12), 0.5);         // |wi+wo|
    Tensor inv_hl = power(hl, -1.0);
    Tensor nh = mul(add(nl, nv), inv_hl);
    Tensor hv = mul(shift(io, 1.0), inv_hl);
    Tensor a2 = clamp_min(power(roughness, 4.0), kMinAlpha2);                     // alpha^2, alpha = R^2
    Tensor den = shift(mul(square(nh), shift(a2, -1.0)), 1.0);
    Tensor D = mul(scale(a2, 1.0 / std::numbers::pi), power(square(den), -1.0));
    Tensor F = shift(scale(power(shift(scale(hv, -1.0), 1.0), 5.0), 1.0 - cfg.f0), cfg.f0);
    Tensor k = scale(a2, 0.5);
    Tensor one_minus_k = shift(scale(k, -1.0), 1.0);
    Tensor cl = clamp_min(nl, cfg.clamp_eps);
    Tensor cv = clamp_min(nv, cfg.clamp_eps);
    // G1(x)/x = 1 / (x (1-k) + k); the 1/(4 cl cv) factor cancels the x's
    Tensor g1l = power(add(mul(cl, one_minus_k), k), -1.0);
    Tensor g1v = power(add(mul(cv, one_minus_k), k), -1.0);
    Tensor spec = scale(mul(mul(D, F), mul(g1l, g1v)), 0.25);                     // (P,Q)
    f = add(diffuse, reshape(spec, {P, kGridSize, 1}));
  }
  return mul(mul(f, cdw), vis);
}

// Unit vectors from each surface point back to the camera, from depth and
// the camera model. D (h,w) -> (h*w, 3).
inline Tensor surface_view_dirs(const Tensor& depth, const CameraModel& cam) {
  using namespace ops;
  std::size_t h = cam.height, w = cam.width;
  std::vector<double> rays(h * w * 3);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      Vec3 ray = cam.ray(static_cast<double>(r), static_cast<double>(c));
      for (std::size_t k = 0; k < 3; ++k) rays[(r * w + c) * 3 + k] = -ray[k];
    }
  Tensor points = mul(reshape(depth, {h * w, 1}), Tensor({h * w, 3}, std::move(rays)));
  return normalize_lastdim(points);
}

struct RenderInputs {
  Tensor depth;      // (h,w)
  Tensor normal;     // (h,w,3)
  Tensor albedo;     // (h,w,3)
  Tensor roughness;  // (h,w)
};

inline void check_render_shapes(const RenderInputs& in, const CameraModel& cam) {
  cam.validate();
  std::size_t h = cam.height, w = cam.width;
  auto expect = [&](const Tensor& t, Shape s, const char* what) {
    if (t.shape() != s)
      throw ShapeError(std::string("render_image: ") + what + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(s));
  };
  expect(in.depth, {h, w}, "depth");
  expect(in.normal, {h, w, 3}, "normal");
  expect(in.albedo, {h, w, 3}, "albedo");
  expect(in.roughness, {h, w}, "roughness");
  for (double v : in.albedo.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("render_image: albedo outside [0,1]");
  for (double v : in.roughness.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("render_image: roughness outside [0,1]");
  for (double v : in.depth.data())
    if (!(v > 0.0)) throw DomainError("render_image: depth must be positive");
}

inline Tensor render_weights(const RenderInputs& in, const CameraModel& cam, const ShadingConfig& cfg = {}) {
  check_render_shapes(in, cam);
  std::size_t P = cam.height * cam.width;
  return render_weights(ops::reshape(in.normal, {P, 3}), ops::reshape(in.albedo, {P, 3}),
                        ops::reshape(in.roughness, {P, 1}), surface_view_dirs(in.depth, cam), cfg);
}

// Contracts precomputed weights (P,512,3) with a lighting field
// (h,w,16,32,3) into an image (h,w,3).
inline Tensor apply_render_weights(const Tensor& weights, const Tensor& lighting, const CameraModel& cam) {
  std::size_t h = cam.height, w = cam.width;
  Shape ls{h, w, kGridTheta, kGridPhi, 3};
  if (lighting.shape() != ls)
    throw ShapeError("render_image: lighting has shape " + shape_str(lighting.shape()) + ", expected " + shape_str(ls));
  Tensor L = ops::reshape(lighting, {h * w, kGridSize, 3});
  return ops::reshape(ops::sum(ops::mul(weights, L), 1), {h, w, 3});
}

// I[p] = sum_q brdf(n_p, dir_q, v_p) L[p,q] (n_p . dir_q) domega_q with the
// grid directions rotated into camera space by local_frame(n_p).
inline Tensor render_image(const RenderInputs& in, const Tensor& lighting, const CameraModel& cam,
                           const ShadingConfig& cfg = {}) {
  return apply_render_weights(render_weights(in, cam, cfg), lighting, cam);
}

}  // namespace sgir
