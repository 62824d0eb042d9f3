// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "sgir/camera.hpp"
#include "sgir/render.hpp"
#include "sgir/scene.hpp"
#include "sgir/sg.hpp"

namespace sgir {

// Sphere resting on the surface seen at pixel (row, col).
struct InsertionSpec {
  std::size_t row = 0, col = 0;
  double radius = 0.1;
  Vec3 albedo{0.8, 0.8, 0.8};
  double roughness = 0.5;

  void validate(const CameraModel& cam) const {
    if (row >= cam.height || col >= cam.width)
      throw ValidationError("insertion pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside the image");
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ValidationError("insertion radius must be positive");
    for (double a : albedo)
      if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("insertion albedo must lie in [0,1]");
    if (!(roughness >= 0.0 && roughness <= 1.0)) throw ValidationError("insertion roughness must lie in [0,1]");
  }
};

// Image plus the per-pixel predictions insertion relies on.
struct InsertionInputs {
  CameraModel camera;
  Tensor image;   // (h,w,3) linear
  Tensor depth;   // (h,w)
  Tensor normal;  // (h,w,3)
  Tensor mask_o;  // (h,w)
  SceneLighting lighting;
};

inline constexpr double kShadowRadii = 3.0;

// Environment map of one pixel with its texel directions in camera space.
struct ProbeLight {
  std::vector<Vec3> dirs;
  std::vector<Vec3> radiance;
  std::vector<double> domega;
};

inline ProbeLight probe_light(const SceneLighting& l, const Vec3& normal, std::size_t row, std::size_t col,
                              std::size_t width) {
  std::size_t K = l.lam.dim(2), p = row * width + col;
  auto slice_px = [&](const Tensor& t, std::size_t per) {
    std::vector<double> v(t.data().begin() + static_cast<long>(p * per), t.data().begin() + static_cast<long>((p + 1) * per));
    return v;
  };
  Tensor env = rasterize_sg(Tensor({K, 3}, slice_px(l.xi, K * 3)), Tensor({K}, slice_px(l.lam, K)),
                            Tensor({K, 3}, slice_px(l.f, K * 3)));
  const auto& grid = direction_grid();
  Frame fr = local_frame(normal);
  ProbeLight out;
  auto e = env.data();
  for (std::size_t q = 0; q < kGridSize; ++q) {
    out.dirs.push_back(fr.to_world(grid.dirs[q]));
    out.radiance.push_back({e[q * 3], e[q * 3 + 1], e[q * 3 + 2]});
    out.domega.push_back(grid.domega[q]);
  }
  return out;
}

// Distance along a unit ray from `o` to the sphere, if it is hit in front.
inline std::optional<double> ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  Vec3 oc = o - c;
  double b = dot(oc, d), cc = dot(oc, oc) - r * r;
  double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= 1e-9) t = -b + s;
  if (t <= 1e-9) return std::nullopt;
  return t;
}

// Ratio of luminance-weighted, cosine-weighted incident light that the
// sphere leaves unoccluded at point x with normal n. In [0,1]; 1 when no
// light direction is blocked.
inline double shadow_factor(const Vec3& x, const Vec3& n, const Vec3& center, double radius, const ProbeLight& light) {
  double all = 0.0, vis = 0.0;
  for (std::size_t q = 0; q < light.dirs.size(); ++q) {
    double c = dot(n, light.dirs[q]);
    if (c <= 0.0) continue;
    const Vec3& L = light.radiance[q];
    double w = (L[0] + L[1] + L[2]) / 3.0 * c * light.domega[q];
    all += w;
    if (!ray_sphere(x, light.dirs[q], center, radius)) vis += w;
  }
  return all > 0.0 ? vis / all : 1.0;
}

struct InsertionResult {
  Tensor image;        // (h,w,3) linear composite
  Tensor sphere_mask;  // (h,w) 1 where the sphere is visible
  Tensor shadow;       // (h,w) applied shadow factor, 1 outside the neighborhood
  Vec3 contact{}, center{};
};

inline void check_insertion_inputs(const InsertionInputs& in) {
  const auto& cam = in.camera;
  cam.validate();
  std::size_t h = cam.height, w = cam.width;
  auto expect = [&](const Tensor& t, Shape s, const char* what) {
    if (t.shape() != s)
      throw ShapeError(std::string("insert: ") + what + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(s));
  };
  expect(in.image, {h, w, 3}, "image");
  expect(in.depth, {h, w}, "depth");
  expect(in.normal, {h, w, 3}, "normal");
  expect(in.mask_o, {h, w}, "mask_o");
  if (in.lighting.lam.rank() != 3 || in.lighting.lam.dim(0) != h || in.lighting.lam.dim(1) != w)
    throw ShapeError("insert: lighting does not cover the image");
}

// Places a sphere tangent to the surface at the contact pixel, shades it
// with the contact pixel's environment map, darkens surface points within
// three radii of the contact by their occlusion ratio, and composites.
inline InsertionResult insert_sphere(const InsertionInputs& in, const InsertionSpec& spec, const ShadingConfig& cfg = {}) {
  check_insertion_inputs(in);
  const auto& cam = in.camera;
  spec.validate(cam);
  std::size_t h = cam.height, w = cam.width;
  std::size_t cp = spec.row * w + spec.col;
  if (in.mask_o[cp] == 0.0) throw ValidationError("insertion pixel lies outside the object mask");
  Vec3 n0{in.normal[cp * 3], in.normal[cp * 3 + 1], in.normal[cp * 3 + 2]};
  n0 = normalize(n0);
  InsertionResult res;
  res.contact = cam.unproject(spec.row, spec.col, in.depth[cp]);
  res.center = res.contact + spec.radius * n0;
  ProbeLight light = probe_light(in.lighting, n0, spec.row, spec.col, w);

  std::vector<double> img(in.image.data().begin(), in.image.data().end());
  std::vector<double> smask(h * w, 0.0), shadow(h * w, 1.0);
  const Vec3 origin{0.0, 0.0, 0.0};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t p = r * w + c;
      Vec3 ray = cam.ray(static_cast<double>(r), static_cast<double>(c));
      Vec3 dir = normalize(ray);
      auto t = ray_sphere(origin, dir, res.center, spec.radius);
      Vec3 surf = cam.unproject(r, c, in.depth[p]);
      if (t && (*t * dir)[2] < surf[2]) {
        Vec3 x = *t * dir;
        Vec3 ns = normalize(x - res.center);
        Vec3 col = shade_point(ns, -1.0 * dir, spec.albedo, spec.roughness, light.dirs, light.radiance, light.domega, cfg);
        for (int k = 0; k < 3; ++k) img[p * 3 + static_cast<std::size_t>(k)] = col[static_cast<std::size_t>(k)];
        smask[p] = 1.0;
        continue;
      }
      if (in.mask_o[p] == 0.0 || length(surf - res.contact) > kShadowRadii * spec.radius) continue;
      Vec3 np{in.normal[p * 3], in.normal[p * 3 + 1], in.normal[p * 3 + 2]};
      double s = shadow_factor(surf, normalize(np), res.center, spec.radius, light);
      shadow[p] = s;
      for (int k = 0; k < 3; ++k) img[p * 3 + static_cast<std::size_t>(k)] *= s;
    }
  res.image = Tensor({h, w, 3}, std::move(img));
  res.sphere_mask = Tensor({h, w}, std::move(smask));
  res.shadow = Tensor({h, w}, std::move(shadow));
  return res;
}

}  // namespace sgir
