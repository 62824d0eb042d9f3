// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgir/camera.hpp"
#include "sgir/params.hpp"
#include "sgir/render.hpp"
#include "sgir/sg.hpp"

namespace sgir {

// Ground-truth (or predicted) per-pixel SG lighting: xi (h,w,K,3) local-frame
// axes, lam (h,w,K), f (h,w,K,3).
struct SceneLighting {
  Tensor xi, lam, f;

  std::map<std::string, Tensor> entries() const { return {{"sg.f", f}, {"sg.lam", lam}, {"sg.xi", xi}}; }
  Tensor packed() const { return pack_sg(xi, lam, f); }
};

struct ScenePixelBuffers {
  CameraModel camera;
  Tensor image;      // (h,w,3) linear HDR
  Tensor depth;      // (h,w) z-depth, meters
  Tensor normal;     // (h,w,3) unit, camera space, facing the camera
  Tensor albedo;     // (h,w,3) in [0,1]
  Tensor roughness;  // (h,w) in [0,1]
  Tensor mask_o;     // (h,w) object pixels
  Tensor mask_l;     // (h,w) valid material/lighting pixels

  RenderInputs render_inputs() const { return {depth, normal, albedo, roughness}; }
};

// Throws ValidationError naming the first violated buffer invariant.
inline void validate_buffers(const ScenePixelBuffers& b) {
  b.camera.validate();
  std::size_t h = b.camera.height, w = b.camera.width;
  auto expect = [&](const Tensor& t, Shape s, const char* what) {
    if (t.shape() != s)
      throw ShapeError(std::string("buffer '") + what + "' has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(s));
    for (double v : t.data())
      if (!std::isfinite(v)) throw DomainError(std::string("buffer '") + what + "' has non-finite values");
  };
  expect(b.image, {h, w, 3}, "image");
  expect(b.depth, {h, w}, "depth");
  expect(b.normal, {h, w, 3}, "normal");
  expect(b.albedo, {h, w, 3}, "albedo");
  expect(b.roughness, {h, w}, "roughness");
  expect(b.mask_o, {h, w}, "mask_o");
  expect(b.mask_l, {h, w}, "mask_l");
  auto mo = b.mask_o.data(), ml = b.mask_l.data(), d = b.depth.data(), n = b.normal.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    if ((mo[p] != 0.0 && mo[p] != 1.0) || (ml[p] != 0.0 && ml[p] != 1.0))
      throw DomainError("masks must be binary");
    if (ml[p] > mo[p]) throw DomainError("mask_l must be a subset of mask_o");
    if (mo[p] == 0.0) continue;
    if (!(d[p] > 0.0)) throw DomainError("depth must be positive under mask_o");
    double len = std::sqrt(n[p * 3] * n[p * 3] + n[p * 3 + 1] * n[p * 3 + 1] + n[p * 3 + 2] * n[p * 3 + 2]);
    if (std::abs(len - 1.0) > 1e-6) throw DomainError("normals must be unit length under mask_o");
  }
  for (double v : b.albedo.data())
    if (v < 0.0 || v > 1.0) throw DomainError("albedo outside [0,1]");
  for (double v : b.roughness.data())
    if (v < 0.0 || v > 1.0) throw DomainError("roughness outside [0,1]");
}

// ---------------------------------------------------------------------------
// Procedural scene generator.

struct GeneratorConfig {
  std::size_t height = 64;
  std::size_t width = 80;
  double vertical_fov = std::numbers::pi / 3.0;
  std::size_t n_boxes = 3;  // upper bound; each scene draws 1..n_boxes (0 means plane only)
  double albedo_min = 0.05, albedo_max = 0.95;
  double roughness_min = 0.2, roughness_max = 0.9;
  double depth_min = 1.0, depth_max = 10.0;
  // floor plane: z-depth at the image center and tilt about the x axis
  // (0 = fronto-parallel, positive = top of the image farther away)
  double plane_depth_min = 2.5, plane_depth_max = 4.0;
  double plane_tilt_min = 0.3, plane_tilt_max = 0.8;
  std::size_t num_lobes = kNumLobes;
  double lobe_lambda_min = 2.0, lobe_lambda_max = 30.0;
  double lobe_intensity_min = 0.0, lobe_intensity_max = 3.0;

  void validate() const {
    auto range = [](double lo, double hi, const char* what) {
      if (!(lo <= hi)) throw ValidationError(std::string("generator: ") + what + " range is empty");
    };
    if (height == 0 || width == 0) throw ValidationError("generator: image size must be positive");
    CameraModel{width, height, vertical_fov}.validate();
    range(albedo_min, albedo_max, "albedo");
    range(roughness_min, roughness_max, "roughness");
    if (albedo_min < 0.0 || albedo_max > 1.0) throw ValidationError("generator: albedo range must lie in [0,1]");
    if (roughness_min < 0.0 || roughness_max > 1.0)
      throw ValidationError("generator: roughness range must lie in [0,1]");
    if (!(depth_min > 0.0 && depth_min < depth_max))
      throw ValidationError("generator: depth range must satisfy 0 < d_min < d_max");
    range(plane_depth_min, plane_depth_max, "plane depth");
    if (plane_depth_min <= 0.0) throw ValidationError("generator: plane depth must be positive");
    range(plane_tilt_min, plane_tilt_max, "plane tilt");
    if (plane_tilt_min <= -std::numbers::pi / 2 || plane_tilt_max >= std::numbers::pi / 2)
      throw ValidationError("generator: plane tilt must lie in (-pi/2, pi/2)");
    if (num_lobes == 0) throw ValidationError("generator: need at least one lobe");
    range(lobe_lambda_min, lobe_lambda_max, "lobe bandwidth");
    if (lobe_lambda_min < 0.0) throw ValidationError("generator: lobe bandwidth must be nonnegative");
    range(lobe_intensity_min, lobe_intensity_max, "lobe intensity");
    if (lobe_intensity_min < 0.0) throw ValidationError("generator: lobe intensity must be nonnegative");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"vertical_fov", c.vertical_fov},
                     {"n_boxes", c.n_boxes},
                     {"albedo_range", {c.albedo_min, c.albedo_max}},
                     {"roughness_range", {c.roughness_min, c.roughness_max}},
                     {"depth_range", {c.depth_min, c.depth_max}},
                     {"plane_depth_range", {c.plane_depth_min, c.plane_depth_max}},
                     {"plane_tilt_range", {c.plane_tilt_min, c.plane_tilt_max}},
                     {"num_lobes", c.num_lobes},
                     {"lobe_lambda_range", {c.lobe_lambda_min, c.lobe_lambda_max}},
                     {"lobe_intensity_range", {c.lobe_intensity_min, c.lobe_intensity_max}}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  if (!j.is_object()) throw ValidationError("generator config must be a JSON object");
  static const char* known[] = {"height",     "width",           "vertical_fov",      "n_boxes",
                                "albedo_range", "roughness_range", "depth_range",       "plane_depth_range",
                                "plane_tilt_range", "num_lobes",   "lobe_lambda_range", "lobe_intensity_range"};
  for (const auto& [k, _] : j.items())
    if (std::none_of(std::begin(known), std::end(known), [&](const char* n) { return k == n; }))
      throw ValidationError("generator config: unknown key '" + k + "'");
  auto pair = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ValidationError(std::string("generator config: '") + key + "' must be [lo, hi]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.vertical_fov = j.value("vertical_fov", c.vertical_fov);
  c.n_boxes = j.value("n_boxes", c.n_boxes);
  pair("albedo_range", c.albedo_min, c.albedo_max);
  pair("roughness_range", c.roughness_min, c.roughness_max);
  pair("depth_range", c.depth_min, c.depth_max);
  pair("plane_depth_range", c.plane_depth_min, c.plane_depth_max);
  pair("plane_tilt_range", c.plane_tilt_min, c.plane_tilt_max);
  c.num_lobes = j.value("num_lobes", c.num_lobes);
  pair("lobe_lambda_range", c.lobe_lambda_min, c.lobe_lambda_max);
  pair("lobe_intensity_range", c.lobe_intensity_min, c.lobe_intensity_max);
}

inline std::string config_digest(const GeneratorConfig& c) { return fnv1a_hex(nlohmann::json(c).dump()); }

struct Scene {
  std::uint64_t seed = 0;
  std::string config_digest;
  ScenePixelBuffers buffers;
  SceneLighting lighting;
};

// Derives independent per-scene seeds from one run seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  // explicit mapping keeps results identical across standard libraries
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

struct Box {
  Vec3 lo, hi;
  Vec3 albedo;
  double roughness;
};

// Entering hit of a ray from the origin; returns parameter and face normal.
inline std::optional<std::pair<double, Vec3>> hit_box(const Box& b, const Vec3& dir) {
  double tn = -std::numeric_limits<double>::infinity(), tf = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (0.0 < b.lo[a] || 0.0 > b.hi[a]) return std::nullopt;
      continue;
    }
    double t0 = b.lo[a] / dir[a], t1 = b.hi[a] / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tn) {
      tn = t0;
      axis = a;
    }
    tf = std::min(tf, t1);
  }
  if (axis < 0 || tn > tf || tn <= 0.0) return std::nullopt;
  Vec3 n{0.0, 0.0, 0.0};
  n[axis] = dir[axis] > 0.0 ? -1.0 : 1.0;
  return std::make_pair(tn, n);
}

inline Tensor round_to_float(const Tensor& t) {
  std::vector<double> d(t.data().begin(), t.data().end());
  for (auto& v : d) v = static_cast<double>(static_cast<float>(v));
  return Tensor(t.shape(), std::move(d));
}

}  // namespace detail

// Expresses one world-frame SG set in every pixel's local shading frame.
inline SceneLighting localize_lighting(std::span<const SGLobe> lobes, const Tensor& normals) {
  std::size_t h = normals.dim(0), w = normals.dim(1), K = lobes.size();
  std::vector<double> xi(h * w * K * 3), lam(h * w * K), f(h * w * K * 3);
  auto nd = normals.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    Frame fr = local_frame(normalize(Vec3{nd[p * 3], nd[p * 3 + 1], nd[p * 3 + 2]}));
    for (std::size_t k = 0; k < K; ++k) {
      Vec3 a = fr.to_local(lobes[k].xi);
      for (std::size_t c = 0; c < 3; ++c) {
        xi[(p * K + k) * 3 + c] = a[c];
        f[(p * K + k) * 3 + c] = lobes[k].f[c];
      }
      lam[p * K + k] = lobes[k].lam;
    }
  }
  return {Tensor({h, w, K, 3}, std::move(xi)), Tensor({h, w, K}, std::move(lam)), Tensor({h, w, K, 3}, std::move(f))};
}

inline Scene generate_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto U = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };
  CameraModel cam{cfg.width, cfg.height, cfg.vertical_fov};
  std::size_t h = cfg.height, w = cfg.width;

  double plane_depth = U(cfg.plane_depth_min, cfg.plane_depth_max);
  double tilt = U(cfg.plane_tilt_min, cfg.plane_tilt_max);
  Vec3 plane_n{0.0, std::sin(tilt), -std::cos(tilt)};
  double plane_c = dot(plane_n, Vec3{0.0, 0.0, plane_depth});
  Vec3 plane_albedo{U(cfg.albedo_min, cfg.albedo_max), U(cfg.albedo_min, cfg.albedo_max),
                    U(cfg.albedo_min, cfg.albedo_max)};
  double plane_rough = U(cfg.roughness_min, cfg.roughness_max);

  std::vector<detail::Box> boxes;
  std::size_t nb = cfg.n_boxes == 0 ? 0 : 1 + static_cast<std::size_t>(rng() % cfg.n_boxes);
  double half_h = std::tan(cfg.vertical_fov / 2.0), aspect = static_cast<double>(w) / static_cast<double>(h);
  for (std::size_t i = 0; i < nb; ++i) {
    double z = U(std::max(cfg.depth_min + 0.5, 0.6 * plane_depth), std::max(cfg.depth_min + 0.6, plane_depth));
    Vec3 c{U(-0.6, 0.6) * z * half_h * aspect, U(-0.6, 0.4) * z * half_h, z};
    Vec3 ext{U(0.15, 0.45), U(0.15, 0.45), U(0.15, 0.45)};
    Vec3 alb{U(cfg.albedo_min, cfg.albedo_max), U(cfg.albedo_min, cfg.albedo_max), U(cfg.albedo_min, cfg.albedo_max)};
    boxes.push_back({c - ext, c + ext, alb, U(cfg.roughness_min, cfg.roughness_max)});
  }

  std::vector<SGLobe> lobes(cfg.num_lobes);
  for (auto& l : lobes) {
    double z = U(-1.0, 1.0), ph = U(0.0, 2.0 * std::numbers::pi), r = std::sqrt(std::max(0.0, 1.0 - z * z));
    l.xi = {r * std::cos(ph), r * std::sin(ph), z};
    l.lam = U(cfg.lobe_lambda_min, cfg.lobe_lambda_max);
    double base = U(cfg.lobe_intensity_min, cfg.lobe_intensity_max);
    for (auto& c : l.f) c = std::min(base * U(0.7, 1.0), cfg.lobe_intensity_max);
  }

  std::vector<double> depth(h * w), normal(h * w * 3), albedo(h * w * 3), rough(h * w), mask(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t p = r * w + c;
      Vec3 ray = cam.ray(static_cast<double>(r), static_cast<double>(c));
      double best = std::numeric_limits<double>::infinity();
      Vec3 n{0.0, 0.0, -1.0}, a{0.0, 0.0, 0.0};
      double rg = 1.0;
      double denom = dot(plane_n, ray);
      if (denom < 0.0) {
        double t = plane_c / denom;
        if (t > 0.0) {
          best = t;
          n = plane_n;
          a = plane_albedo;
          rg = plane_rough;
        }
      }
      for (const auto& b : boxes)
        if (auto hit = detail::hit_box(b, ray); hit && hit->first < best) {
          best = hit->first;
          n = hit->second;
          a = b.albedo;
          rg = b.roughness;
        }
      // ray.z == 1, so the ray parameter is the z-depth
      bool valid = best >= cfg.depth_min && best <= cfg.depth_max;
      if (!valid) {
        n = {0.0, 0.0, -1.0};
        a = {0.0, 0.0, 0.0};
        rg = 1.0;
        best = cfg.depth_max;
      }
      depth[p] = best;
      rough[p] = rg;
      mask[p] = valid ? 1.0 : 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        normal[p * 3 + k] = n[k];
        albedo[p * 3 + k] = a[k];
      }
    }

  Scene s;
  s.seed = seed;
  s.config_digest = config_digest(cfg);
  auto& B = s.buffers;
  B.camera = cam;
  B.depth = detail::round_to_float(Tensor({h, w}, std::move(depth)));
  B.normal = detail::round_to_float(Tensor({h, w, 3}, std::move(normal)));
  B.albedo = detail::round_to_float(Tensor({h, w, 3}, std::move(albedo)));
  B.roughness = detail::round_to_float(Tensor({h, w}, std::move(rough)));
  B.mask_o = Tensor({h, w}, mask);
  B.mask_l = Tensor({h, w}, std::move(mask));  // no emitters: every object pixel has valid material

  SceneLighting L = localize_lighting(lobes, B.normal);
  s.lighting = {detail::round_to_float(L.xi), detail::round_to_float(L.lam), detail::round_to_float(L.f)};
  Tensor env = rasterize_sg(s.lighting.xi, s.lighting.lam, s.lighting.f);
  B.image = detail::round_to_float(render_image(B.render_inputs(), env, cam));
  return s;
}

}  // namespace sgir
