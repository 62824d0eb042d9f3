// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion on stdout, exit status 1
// if any criterion fails. Optional arguments select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "sgir/insert.hpp"
#include "sgir/render.hpp"
#include "sgir/sg.hpp"
#include "sgir/train.hpp"
#include "test_util.hpp"

namespace sgir {
namespace {

using namespace sgir::testing;
using std::numbers::pi;

// Tolerances and limits.
constexpr int kGradCases = 100;
constexpr double kGradTolPrimitive = 1e-4;
constexpr double kGradTolEndToEnd = 1e-3;
constexpr double kGradSuiteSeconds = 300.0;
constexpr double kEnergyTol = 5e-3;
constexpr double kSolidAngleTol = 1e-3;
constexpr double kAlbedoTol = 5e-3;
constexpr double kScaleInvTol = 1e-9;
constexpr double kUnitTotal = 3.5;
constexpr int kWhdrInstances = 1000;
constexpr double kAdamTol = 1e-12;
constexpr int kAdamSteps = 10;
constexpr double kStage1Ratio = 0.20;
constexpr double kStage2Ratio = 0.40;
constexpr std::size_t kOverfitSteps = 500;
constexpr std::size_t kOverfitScenes = 8;
constexpr double kOverfitSeconds = 1800.0;
constexpr double kOracleTol = 1e-12;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return normalize(Vec3{n(rng), n(rng), n(rng)});
}

// ---------------------------------------------------------------------------
// 1. Gradient suite.

using MakeFn = std::function<std::vector<Tensor>(Rng&)>;
using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Primitive {
  std::string name;
  MakeFn make;
  OpFn op;
};

Tensor away_from_zero(Rng& rng, const Shape& s, double lo, double hi) {
  Tensor t = random_tensor(rng, s, lo, hi);
  for (auto& v : t.mutable_data()) v = (uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0) * v;
  return t;
}

std::vector<Primitive> primitives() {
  auto one = [](Shape (*shape)(Rng&), double lo, double hi) {
    return [shape, lo, hi](Rng& r) { return std::vector<Tensor>{random_tensor(r, shape(r), lo, hi)}; };
  };
  auto rank2 = +[](Rng& r) { return random_shape(r, 2, 5); };
  auto rank3 = +[](Rng& r) { return random_shape(r, 3); };
  std::vector<Primitive> ps = {
      {"add",
       [](Rng& r) {
         Shape a = random_shape(r, uniform_int(r, 1, 3)), b = a;
         for (auto& e : b)
           if (uniform(r, 0, 1) < 0.3) e = 1;
         return std::vector<Tensor>{random_tensor(r, a), random_tensor(r, b)};
       },
       [](const std::vector<Tensor>& x) { return ops::add(x[0], x[1]); }},
      {"mul",
       [](Rng& r) {
         Shape a = random_shape(r, uniform_int(r, 1, 3));
         Shape b(a.end() - static_cast<long>(uniform_int(r, 1, a.size())), a.end());
         return std::vector<Tensor>{random_tensor(r, a), random_tensor(r, b)};
       },
       [](const std::vector<Tensor>& x) { return ops::mul(x[0], x[1]); }},
      {"sub",
       [](Rng& r) {
         Shape a = random_shape(r, 2);
         return std::vector<Tensor>{random_tensor(r, a), random_tensor(r, a)};
       },
       [](const std::vector<Tensor>& x) { return ops::sub(x[0], x[1]); }},
      {"scale", one(rank2, -1, 1), [](const std::vector<Tensor>& x) { return ops::scale(x[0], -2.5); }},
      {"concat",
       [](Rng& r) {
         Shape a = random_shape(r, 3), b = a;
         b[1] = uniform_int(r, 1, 4);
         return std::vector<Tensor>{random_tensor(r, a), random_tensor(r, b)};
       },
       [](const std::vector<Tensor>& x) { return ops::concat({x[0], x[1]}, 1); }},
      {"slice",
       [](Rng& r) {
         Shape a = random_shape(r, 3, 5);
         a[2] = uniform_int(r, 2, 5);
         return std::vector<Tensor>{random_tensor(r, a)};
       },
       [](const std::vector<Tensor>& x) { return ops::slice(x[0], -1, x[0].dim(2) / 2, x[0].dim(2)); }},
      {"reshape", one(rank3, -1, 1), [](const std::vector<Tensor>& x) { return ops::reshape(x[0], {x[0].size()}); }},
      {"transpose", one(rank3, -1, 1), [](const std::vector<Tensor>& x) { return ops::transpose(x[0], {2, 0, 1}); }},
      {"softmax_lastdim", one(rank2, -3, 3), [](const std::vector<Tensor>& x) { return ops::softmax_lastdim(x[0]); }},
      {"layer_norm",
       [](Rng& r) {
         Shape s = random_shape(r, 2, 6);
         s[1] = uniform_int(r, 2, 6);
         return std::vector<Tensor>{random_tensor(r, s, -2, 2)};
       },
       [](const std::vector<Tensor>& x) { return ops::layer_norm(x[0]); }},
      {"gelu", one(rank2, -3, 3), [](const std::vector<Tensor>& x) { return ops::gelu(x[0]); }},
      {"tanh", one(rank2, -2, 2), [](const std::vector<Tensor>& x) { return ops::tanh(x[0]); }},
      {"exp", one(rank2, -2, 2), [](const std::vector<Tensor>& x) { return ops::exp(x[0]); }},
      {"log", one(rank2, 0.2, 3), [](const std::vector<Tensor>& x) { return ops::log(x[0]); }},
      {"sum", one(rank3, -1, 1), [](const std::vector<Tensor>& x) { return ops::sum(x[0]); }},
      {"sum_axis", one(rank3, -1, 1), [](const std::vector<Tensor>& x) { return ops::sum(x[0], 1); }},
      {"mean", one(rank3, -1, 1),
       [](const std::vector<Tensor>& x) { return ops::add(ops::mean(x[0], -1), ops::mean(x[0])); }},
      {"max_with_zero", [](Rng& r) { return std::vector<Tensor>{away_from_zero(r, random_shape(r, 2), 0.05, 2)}; },
       [](const std::vector<Tensor>& x) { return ops::max_with_zero(x[0]); }},
      {"normalize_lastdim",
       [](Rng& r) { return std::vector<Tensor>{away_from_zero(r, {uniform_int(r, 1, 4), 3}, 0.2, 2)}; },
       [](const std::vector<Tensor>& x) { return ops::normalize_lastdim(x[0]); }},
      {"matmul",
       [](Rng& r) {
         std::size_t B = uniform_int(r, 1, 3), M = uniform_int(r, 1, 4), K = uniform_int(r, 1, 4), N = uniform_int(r, 1, 4);
         return std::vector<Tensor>{random_tensor(r, {B, M, K}), random_tensor(r, {K, N})};
       },
       [](const std::vector<Tensor>& x) { return ops::matmul(x[0], x[1]); }},
      {"matmul_batched",
       [](Rng& r) {
         std::size_t B = uniform_int(r, 1, 3), M = uniform_int(r, 1, 4), K = uniform_int(r, 1, 4), N = uniform_int(r, 1, 4);
         return std::vector<Tensor>{random_tensor(r, {B, M, K}), random_tensor(r, {B, K, N})};
       },
       [](const std::vector<Tensor>& x) { return ops::matmul(x[0], x[1]); }},
      {"conv2d",
       [](Rng& r) {
         std::size_t k = uniform_int(r, 1, 3);
         std::size_t H = uniform_int(r, k, 5), W = uniform_int(r, k, 5), Ci = uniform_int(r, 1, 3), Co = uniform_int(r, 1, 3);
         return std::vector<Tensor>{random_tensor(r, {uniform_int(r, 1, 2), H, W, Ci}), random_tensor(r, {k, k, Ci, Co})};
       },
       [](const std::vector<Tensor>& x) { return ops::conv2d(x[0], x[1], 1 + x[0].dim(1) % 2, x[1].dim(0) / 2); }},
      {"bilinear_upsample_2x",
       [](Rng& r) {
         return std::vector<Tensor>{
             random_tensor(r, {uniform_int(r, 1, 2), uniform_int(r, 1, 4), uniform_int(r, 1, 4), uniform_int(r, 1, 3)})};
       },
       [](const std::vector<Tensor>& x) { return ops::bilinear_upsample_2x(x[0]); }},
  };
  for (double p : {-1.0, -0.5, 0.5, 2.0, 3.0})
    ps.push_back({"power(" + sci(p) + ")", one(rank2, 0.3, 2), [p](const std::vector<Tensor>& x) {
                    return ops::power(x[0], p);
                  }});
  return ps;
}

struct Worst {
  double err = 0.0;
  std::string where;

  void update(double e, const std::string& name) {
    if (!(e <= err)) err = e, where = name;
  }
};

// Weighted-sum gradient check of a tensor-valued function.
double weighted_check(Rng& rng, const OpFn& op, const std::vector<Tensor>& xs) {
  Tensor w = random_tensor(rng, op(xs).shape());
  return gradient_error(weighted_sum(op, w), xs);
}

std::vector<OrdinalJudgement> random_judgements(Rng& rng, std::size_t h, std::size_t w, std::size_t n) {
  std::vector<OrdinalJudgement> js(n);
  for (auto& j : js)
    j = {uniform_int(rng, 0, w - 1), uniform_int(rng, 0, h - 1), uniform_int(rng, 0, w - 1),
         uniform_int(rng, 0, h - 1), static_cast<OrdinalLabel>(uniform_int(rng, 0, 2)), uniform(rng, 0.1, 2.0)};
  return js;
}

// Every loss, each differentiated with respect to its prediction inputs.
void loss_gradients(Worst& worst) {
  Rng rng(101);
  for (int c = 0; c < kGradCases; ++c) {
    std::size_t h = uniform_int(rng, 1, 3), w = uniform_int(rng, 1, 3);
    Tensor m = random_mask(rng, {h, w});
    Tensor g3 = random_tensor(rng, {h, w, 3}, 0.05, 1.0), g1 = random_tensor(rng, {h, w}, 0.5, 5.0);
    Tensor p3 = random_tensor(rng, {h, w, 3}, 0.05, 1.0), p1 = random_tensor(rng, {h, w}, 0.5, 5.0);
    std::vector<std::pair<std::string, ScalarFn>> fns = {
        {"lsq_scale", [&](const std::vector<Tensor>& x) { return lsq_scale(x[0], g3, m); }},
        {"lsq_log_offset", [&](const std::vector<Tensor>& x) { return lsq_log_offset(x[0], g3, m); }},
        {"scale_inv_linear",
         [&](const std::vector<Tensor>& x) { return loss_scale_inv_l2(x[0], g3, m, LossSpace::linear); }},
        {"scale_inv_log", [&](const std::vector<Tensor>& x) { return loss_scale_inv_l2(x[0], g3, m, LossSpace::log); }},
        {"scale_inv_log_fused", [&](const std::vector<Tensor>& x) { return loss_scale_inv_log_fused(x[0], g3, m); }},
        {"scale_inv_per_channel",
         [&](const std::vector<Tensor>& x) { return loss_scale_inv_l2_per_channel(x[0], g3, m); }},
        {"l2_masked", [&](const std::vector<Tensor>& x) { return loss_l2_masked(x[0], g3, m); }},
    };
    for (auto& [name, f] : fns) worst.update(gradient_error(f, {p3}), name);
    BrdfGeoMaps gt{g3, ops::scale(g1, 0.1), g1, random_tensor(rng, {h, w, 3})};
    ScalarFn brdf = [&](const std::vector<Tensor>& x) {
      return loss_brdfgeo({x[0], x[1], x[2], x[3]}, gt, m, m, {}).total;
    };
    worst.update(gradient_error(brdf, {p3, ops::scale(p1, 0.1), p1, random_tensor(rng, {h, w, 3})}), "loss_brdfgeo");
    Tensor env = random_tensor(rng, {h, w, 2, 2, 3}, 0.1, 2.0);
    ScalarFn light = [&](const std::vector<Tensor>& x) { return loss_light(x[0], env, x[1], g3, m, m, {}).total; };
    worst.update(gradient_error(light, {random_tensor(rng, env.shape(), 0.1, 2.0), p3}), "loss_light");
    auto js = random_judgements(rng, h, w, 4);
    ScalarFn rel = [&](const std::vector<Tensor>& x) { return relative_albedo_loss(x[0], js); };
    worst.update(gradient_error(rel, {p3}), "relative_albedo_loss");
  }
}

void sg_gradients(Worst& worst) {
  Rng rng(102);
  for (int c = 0; c < kGradCases; ++c) {
    std::size_t K = uniform_int(rng, 1, 4);
    Vec3 eta = random_unit(rng);
    std::vector<Tensor> xs = {random_tensor(rng, {K, 3}, -1, 1), random_tensor(rng, {K}, 0, 20),
                              random_tensor(rng, {K, 3}, 0, 2)};
    for (std::size_t k = 0; k < K; ++k) xs[0].mutable_data()[3 * k + 2] += 1.5;
    worst.update(weighted_check(rng, [eta](const std::vector<Tensor>& x) { return sg_eval(x[0], x[1], x[2], eta); }, xs),
                 "sg_eval");
  }
  for (int c = 0; c < kGradCases; ++c) {
    std::size_t P = uniform_int(rng, 1, 2), K = uniform_int(rng, 1, 3);
    std::vector<double> xi;
    for (std::size_t i = 0; i < P * K; ++i) {
      Vec3 v = random_unit(rng);
      xi.insert(xi.end(), v.begin(), v.end());
    }
    std::vector<Tensor> xs = {Tensor({P, K, 3}, xi), random_tensor(rng, {P, K}, 0, 15),
                              random_tensor(rng, {P, K, 3}, 0, 2)};
    worst.update(weighted_check(rng, [](const std::vector<Tensor>& x) { return rasterize_sg(x[0], x[1], x[2]); }, xs),
                 "rasterize_sg");
  }
}

// Random small scenes with unnormalized camera-facing normals, differentiated
// through rasterization and shading.
void render_gradients(Worst& worst) {
  Rng rng(103);
  for (int c = 0; c < kGradCases; ++c) {
    std::size_t h = uniform_int(rng, 1, 3), w = uniform_int(rng, 1, 3), K = 2;
    CameraModel cam{w, h, uniform(rng, 0.6, 1.4)};
    std::vector<double> n, xi;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) {
        Vec3 back = -1.0 * normalize(cam.ray(static_cast<double>(r), static_cast<double>(q)));
        Vec3 v = normalize(back + uniform(rng, 0.0, 0.8) * random_unit(rng));
        if (frame_uses_fallback(v)) v = normalize(v + Vec3{0.05, 0.0, 0.0});
        double s = uniform(rng, 0.5, 2.0);
        for (double x : v) n.push_back(s * x);
      }
    for (std::size_t i = 0; i < h * w * K; ++i) {
      Vec3 v = random_unit(rng);
      xi.insert(xi.end(), v.begin(), v.end());
    }
    Tensor depth = random_tensor(rng, {h, w}, 1.0, 5.0);
    std::vector<Tensor> xs = {Tensor({h, w, 3}, n), random_tensor(rng, {h, w, 3}, 0.05, 0.95),
                              random_tensor(rng, {h, w}, 0.3, 1.0), Tensor({h, w, K, 3}, xi),
                              random_tensor(rng, {h, w, K}, 0.0, 15.0), random_tensor(rng, {h, w, K, 3}, 0.0, 2.0)};
    OpFn op = [depth, cam](const std::vector<Tensor>& x) {
      return render_image({depth, x[0], x[1], x[2]}, rasterize_sg(x[3], x[4], x[5]), cam);
    };
    worst.update(weighted_check(rng, op, xs), "render_image");
  }
}

DPTConfig tiny_model() {
  DPTConfig c;
  c.h = c.w = 32;
  c.d_model = 16;
  c.n_heads = 2;
  c.m_enc = c.m_dec = 1;
  c.d_fuse = 8;
  c.head_width = 4;
  c.embed1 = 4;
  c.embed2 = 8;
  c.mlp_ratio = 2;
  return c;
}

void perturb(ParamSet& ps, Rng& rng, double s) {
  for (auto& [_, t] : ps)
    for (auto& v : t.mutable_data()) v += uniform(rng, -s, s);
}

// Central difference at coordinate `flat` of input `k`.
double central_difference(const ScalarFn& f, const std::vector<Tensor>& xs, std::size_t k, std::size_t flat, double h) {
  auto eval = [&](double d) {
    std::vector<Tensor> ys = xs;
    ys[k] = Tensor(xs[k].shape(), xs[k].vec());
    ys[k].mutable_data()[flat] += d;
    return f(ys).item();
  };
  return (eval(h) - eval(-h)) / (2.0 * h);
}

// Sampled relative error over `count` coordinates whose stencil is smooth:
// a coordinate is redrawn when its central differences at h and h/10
// disagree, which happens when a ReLU kink lies inside the stencil. The
// decision uses only function values.
double smooth_sampled_error(const ScalarFn& f, const std::vector<Tensor>& xs, Rng& rng, std::size_t count,
                            std::size_t& redraws) {
  constexpr double h = 1e-5, kConsistency = 1e-4, kNoise = 1e-8;
  constexpr std::size_t kMaxRedraws = 20;
  std::vector<Tensor> a = analytic_grad(f, xs);
  std::size_t total = 0;
  for (const auto& x : xs) total += x.size();
  std::vector<double> va, vn;
  std::size_t local = 0;
  while (va.size() < count) {
    std::size_t flat = uniform_int(rng, 0, total - 1), k = 0;
    while (flat >= xs[k].size()) flat -= xs[k++].size();
    double coarse = central_difference(f, xs, k, flat, h), fine = central_difference(f, xs, k, flat, h / 10.0);
    if (std::abs(coarse - fine) > kConsistency * std::max(std::abs(coarse), std::abs(fine)) + kNoise) {
      ++redraws;
      if (++local > kMaxRedraws) return std::numeric_limits<double>::infinity();
      continue;
    }
    va.push_back(a[k][flat]);
    vn.push_back(coarse);
  }
  return relative_error({Tensor({count}, va)}, {Tensor({count}, vn)});
}

// L_BRDFGeo of a tiny multi-task network on generated scenes; each case
// draws a scene, a parameter perturbation and three parameter coordinates.
void end_to_end_gradients(Worst& worst, std::size_t& redraws) {
  Rng rng(104);
  DPTConfig cfg = tiny_model();
  GeneratorConfig gen;
  gen.height = gen.width = 32;
  std::vector<std::string> names;
  for (const auto& [k, _] : init_model(cfg).params) names.push_back(k);
  for (int c = 0; c < kGradCases; ++c) {
    if (c % 10 == 0) cfg.seed = static_cast<std::uint64_t>(c);
    std::vector<Scene> scene = {generate_scene(1000 + static_cast<std::uint64_t>(c), gen)};
    Model m = init_model(cfg);
    perturb(m.params, rng, 0.05);
    std::vector<Tensor> xs;
    for (const auto& [_, t] : m.params) xs.push_back(t);
    ScalarFn f = [&](const std::vector<Tensor>& x) {
      ParamSet ps;
      for (std::size_t i = 0; i < names.size(); ++i) ps[names[i]] = x[i];
      return stage1_loss(cfg, ps, scene, {0}, {}).total;
    };
    worst.update(smooth_sampled_error(f, xs, rng, 3, redraws), "brdfgeo_end_to_end");
  }
}

void criterion_gradients(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  Worst prim, loss, sg, render, e2e;
  for (const auto& p : primitives()) {
    Rng rng(std::hash<std::string>{}(p.name) & 0xffff);
    for (int c = 0; c < kGradCases; ++c) prim.update(weighted_check(rng, p.op, p.make(rng)), p.name);
  }
  Rng mlp_rng(105);
  for (int c = 0; c < kGradCases; ++c) {
    std::vector<Tensor> xs = {random_tensor(mlp_rng, {3, 4}), random_tensor(mlp_rng, {4, 5}),
                              random_tensor(mlp_rng, {5}), random_tensor(mlp_rng, {5, 2})};
    ScalarFn f = [](const std::vector<Tensor>& x) {
      Tensor h = ops::gelu(ops::add(ops::matmul(x[0], x[1]), x[2]));
      return ops::sum(ops::square(ops::matmul(h, x[3])));
    };
    prim.update(gradient_error(f, xs), "gelu_mlp");
  }
  loss_gradients(loss);
  sg_gradients(sg);
  render_gradients(render);
  std::size_t redraws = 0;
  end_to_end_gradients(e2e, redraws);
  double secs = seconds_since(t0);
  o.detail << kGradCases << " cases per check; worst rel err: primitives " << sci(prim.err) << " (" << prim.where
           << "), losses " << sci(loss.err) << " (" << loss.where << "), sg " << sci(sg.err) << " (" << sg.where
           << "), renderer " << sci(render.err) << ", end-to-end " << sci(e2e.err) << " (" << redraws
           << " kinked stencils redrawn); " << sci(secs) << " s";
  for (const Worst* w : {&prim, &loss, &sg, &render})
    o.require(w->err < kGradTolPrimitive, w->where + " error " + sci(w->err) + " >= " + sci(kGradTolPrimitive));
  o.require(e2e.err < kGradTolEndToEnd, "end-to-end error " + sci(e2e.err) + " >= " + sci(kGradTolEndToEnd));
  o.require(secs < kGradSuiteSeconds, "runtime " + sci(secs) + " s >= " + sci(kGradSuiteSeconds) + " s");
}

// ---------------------------------------------------------------------------
// 2. SG energy on the direction grid.

void criterion_energy(Outcome& o) {
  Tensor env = rasterize_sg(Tensor({1, 3}, {0, 0, 1}), Tensor({1}, {10.0}), Tensor({1, 3}, {1, 1, 1}));
  const auto& g = direction_grid();
  double energy = 0.0, solid = 0.0;
  for (std::size_t q = 0; q < kGridSize; ++q) {
    energy += env[q * 3] * g.domega[q];
    solid += g.domega[q];
  }
  double exact = 2.0 * pi * (1.0 - std::exp(-10.0)) / 10.0;
  double e_rel = std::abs(energy - exact) / exact, s_rel = std::abs(solid - 2.0 * pi) / (2.0 * pi);
  o.detail << "energy " << energy << " vs " << exact << " (rel " << sci(e_rel) << "), solid angle " << solid
           << " vs 2pi (rel " << sci(s_rel) << ")";
  o.require(e_rel <= kEnergyTol, "energy");
  o.require(s_rel <= kSolidAngleTol, "solid angle");
}

// ---------------------------------------------------------------------------
// 3. Diffuse render under uniform unit lighting reproduces albedo.

void criterion_albedo(Outcome& o) {
  ShadingConfig cfg;
  cfg.diffuse_only = true;
  double worst = 0.0;
  std::size_t pixels = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Scene s = generate_scene(seed, {});
    const auto& b = s.buffers;
    std::size_t h = b.camera.height, w = b.camera.width;
    Tensor img = render_image(b.render_inputs(), Tensor::ones({h, w, kGridTheta, kGridPhi, 3}), b.camera, cfg);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (b.mask_o[p] != 1.0) continue;
      ++pixels;
      for (std::size_t c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(img[p * 3 + c] - b.albedo[p * 3 + c]) / b.albedo[p * 3 + c]);
    }
  }
  o.detail << pixels << " masked pixels over 3 scenes, worst rel err " << sci(worst);
  o.require(pixels > 0, "no masked pixels");
  o.require(worst <= kAlbedoTol, "albedo");
}

// ---------------------------------------------------------------------------
// 4. Scale invariance and loss weighting.

void criterion_scale_invariance(Outcome& o) {
  Rng rng(4);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    Shape s = random_shape(rng, 2, 6);
    s.push_back(3);
    Tensor p = random_tensor(rng, s, 0.05, 2.0), g = random_tensor(rng, s, 0.05, 2.0);
    Tensor m = random_mask(rng, {s[0], s[1]});
    double k = uniform(rng, 0.1, 10.0);
    for (LossSpace sp : {LossSpace::linear, LossSpace::log}) {
      double a = loss_scale_inv_l2(p, g, m, sp).item(), b = loss_scale_inv_l2(ops::scale(p, k), g, m, sp).item();
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-300));
    }
  }
  // Each sub-loss evaluates to exactly 1 on this pair.
  BrdfGeoMaps pred{Tensor::ones({1, 2, 3}), Tensor::zeros({1, 2}), Tensor::ones({1, 2}), Tensor::zeros({1, 2, 3})};
  BrdfGeoMaps gt{Tensor({1, 2, 3}, {0, 0, 0, 2, 2, 2}), Tensor::ones({1, 2}),
                 Tensor({1, 2}, {1, std::exp(2.0)}), Tensor::ones({1, 2, 3})};
  LossWeights w;
  Tensor mask = Tensor::ones({1, 2});
  BrdfGeoLoss l = loss_brdfgeo(pred, gt, mask, mask, w);
  double total = l.total.item();
  o.detail << "200 scalings worst rel change " << sci(worst) << "; weights " << w.albedo << "/" << w.roughness << "/"
           << w.depth << "/" << w.normal << ", unit-term total " << total;
  o.require(worst <= kScaleInvTol, "scale invariance");
  o.require(w.albedo == 1.5 && w.roughness == 0.5 && w.depth == 0.5 && w.normal == 1.0, "default weights");
  for (double t : {l.terms.albedo, l.terms.roughness, l.terms.depth, l.terms.normal})
    o.require(std::abs(t - 1.0) < 1e-12, "unit sub-loss");
  o.require(std::abs(total - kUnitTotal) < 1e-12, "weighted total");
}

// ---------------------------------------------------------------------------
// 5. WHDR and Adam against standalone references.

double whdr_reference(const Tensor& a, const std::vector<OrdinalJudgement>& js, double delta) {
  double err = 0.0, tot = 0.0;
  std::size_t w = a.dim(1);
  for (const auto& j : js) {
    std::size_t i1 = (j.y1 * w + j.x1) * 3, i2 = (j.y2 * w + j.x2) * 3;
    double l1 = (a[i1] + a[i1 + 1] + a[i1 + 2]) / 3.0, l2 = (a[i2] + a[i2 + 1] + a[i2 + 2]) / 3.0;
    OrdinalLabel pred = OrdinalLabel::equal;
    if (l1 / l2 > 1.0 + delta)
      pred = OrdinalLabel::point2_darker;
    else if (l1 / l2 < 1.0 / (1.0 + delta))
      pred = OrdinalLabel::point1_darker;
    tot += j.weight;
    if (pred != j.label) err += j.weight;
  }
  return err / tot;
}

struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    return x - lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
};

void criterion_oracles(Outcome& o) {
  Rng rng(5);
  int mismatches = 0;
  for (int c = 0; c < kWhdrInstances; ++c) {
    std::size_t h = uniform_int(rng, 1, 5), w = uniform_int(rng, 1, 5);
    Tensor a = random_tensor(rng, {h, w, 3}, 0.01, 1.0);
    auto js = random_judgements(rng, h, w, uniform_int(rng, 1, 12));
    if (whdr(a, js) != whdr_reference(a, js, 0.1)) ++mismatches;
  }
  // f(x) = sum(x^4 / 4 - x) with gradient x^3 - 1 per coordinate.
  std::vector<double> x0 = {1.3, -0.7, 0.2, 2.0, -1.5};
  ParamSet p{{"x", Tensor({x0.size()}, x0)}};
  AdamState st;
  st.lr = 0.05;
  std::vector<ScalarAdam> ref(x0.size(), ScalarAdam{0.05});
  std::vector<double> x = x0;
  double worst = 0.0;
  for (int k = 0; k < kAdamSteps; ++k) {
    Tape tape;
    ParamSet b = bind_params(p, tape);
    Tensor loss = ops::sum(ops::sub(ops::scale(ops::power(b.at("x"), 4.0), 0.25), b.at("x")));
    adam_step(p, gather_grads(b, backward(tape, loss)), st);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = ref[i].step(x[i], x[i] * x[i] * x[i] - 1.0);
      worst = std::max(worst, std::abs(p.at("x")[i] - x[i]));
    }
  }
  o.detail << "WHDR " << kWhdrInstances << " instances, " << mismatches << " mismatches; Adam " << kAdamSteps
           << " steps max abs diff " << sci(worst);
  o.require(mismatches == 0, "WHDR");
  o.require(worst <= kAdamTol, "Adam");
}

// ---------------------------------------------------------------------------
// 6. Overfitting on generated scenes.

void criterion_overfit(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < kOverfitScenes; ++i) scenes.push_back(generate_scene(i, {}));

  TrainConfig c1;
  c1.stage = 1;
  c1.steps = kOverfitSteps;
  c1.lr = 1e-4;
  c1.batch_size = 2;
  c1.model.h = 64;
  c1.model.w = 80;
  c1.model.d_model = 64;
  c1.model.m_enc = c1.model.m_dec = 2;
  auto pairs = [&](const ParamSet& ps) {
    double t = 0.0;
    for (std::size_t i = 0; i < kOverfitScenes; i += 2) t += stage1_loss(c1.model, ps, scenes, {i, i + 1}, c1.weights).total.item();
    return t / static_cast<double>(kOverfitScenes / 2);
  };
  double s1_before = pairs(init_model(c1.model).params);
  TrainResult r1 = train_stage1(c1, scenes);
  double s1_after = pairs(r1.model.params);

  TrainConfig c2 = c1;
  c2.stage = 2;
  c2.batch_size = 1;
  c2.model.mode = ModelMode::light_full;
  c2.model.head_bn = false;
  c2.lightnet_mode = LightMode::full;
  std::string frozen_bytes = encode_checkpoint(r1.model.params);
  auto data = prepare_stage2(scenes, LightMode::full, &r1.model);
  auto per_scene = [&](const ParamSet& ps) {
    double t = 0.0;
    for (std::size_t i = 0; i < kOverfitScenes; ++i) t += stage2_loss(c2.model, ps, data, {i}, c2.weights).total.item();
    return t / static_cast<double>(kOverfitScenes);
  };
  double s2_before = per_scene(init_model(c2.model).params);
  TrainResult r2 = train_stage2(c2, scenes, &r1.model);
  double s2_after = per_scene(r2.model.params);
  bool frozen = encode_checkpoint(r1.model.params) == frozen_bytes &&
                r2.report.frozen_digest_before == r2.report.frozen_digest_after;
  double secs = seconds_since(t0);

  double q1 = s1_after / s1_before, q2 = s2_after / s2_before;
  o.detail << "stage 1 L_BRDFGeo " << sci(s1_before) << " -> " << sci(s1_after) << " (ratio " << sci(q1) << " <= "
           << kStage1Ratio << "); stage 2 loss " << sci(s2_before) << " -> " << sci(s2_after) << " (ratio " << sci(q2)
           << " <= " << kStage2Ratio << "); frozen model " << (frozen ? "unchanged" : "CHANGED") << "; " << sci(secs)
           << " s";
  o.require(q1 <= kStage1Ratio, "stage 1 ratio");
  o.require(q2 <= kStage2Ratio, "stage 2 ratio");
  o.require(frozen, "frozen model");
  o.require(secs < kOverfitSeconds, "runtime");
}

// ---------------------------------------------------------------------------
// 7. Structural checks.

std::size_t param_count(const ParamSet& ps) {
  std::size_t n = 0;
  for (const auto& [_, t] : ps) n += t.size();
  return n;
}

void criterion_structure(Outcome& o) {
  Rng rng(7);
  DPTConfig big = tiny_model();
  big.h = 256;
  big.w = 320;
  Model bm = init_model(big);
  EmbedOutput e = patch_embed(bm.params, "brdfgeo.embed.", random_tensor(rng, {256, 320, 3}, 0, 1), big);
  std::size_t tokens = e.tokens.dim(1) - 1;
  o.require(big.num_patches() == 320 && tokens == 320, "token count");

  DPTConfig c;  // 64x80, d=64, 2/2 layers
  std::size_t multi = param_count(init_model(c).params), singles = 0;
  DPTConfig s = c;
  s.mode = ModelMode::single_task;
  for (HeadKind k : brdfgeo_kinds()) {
    s.task = k;
    singles += param_count(init_model(s).params);
  }
  o.require(multi < singles, "multi-task parameter count");

  DPTConfig lc = c;
  lc.mode = ModelMode::light_full;
  lc.head_bn = false;
  Model lm = init_model(lc);
  Tensor packed = lightnet_forward(lm, random_tensor(rng, {64, 80, 11}, 0, 1)).packed();
  o.require(packed.shape() == Shape({1, 64, 80, 12, 7}), "LightNet output shape");

  Model am = init_model(c);
  perturb(am.params, rng, 0.3);
  Tensor img = random_tensor(rng, {64, 80, 3}, 0, 1);
  double row_err = 0.0;
  for (std::size_t layer = 0; layer < c.m_enc; ++layer)
    for (std::size_t head = 0; head < c.n_heads; ++head) {
      Tensor a = attention_extract(am, img, layer, head);
      std::size_t n = a.dim(0);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += a[i * n + j];
        row_err = std::max(row_err, std::abs(sum - 1.0));
      }
    }
  o.require(row_err < 1e-6, "attention rows");

  DPTConfig one = tiny_model();
  one.h = one.w = 16;
  Model om = init_model(one);
  perturb(om.params, rng, 0.3);
  double single_err = 0.0;
  for (std::size_t layer = 0; layer < one.m_enc; ++layer)
    for (std::size_t head = 0; head < one.n_heads; ++head) {
      Tensor a = attention_extract(om, random_tensor(rng, {16, 16, 3}, 0, 1), layer, head);
      single_err = std::max(single_err, a.size() == 1 ? std::abs(a.item() - 1.0) : 1.0);
    }
  o.require(single_err < 1e-15, "single-token attention");

  o.detail << "tokens " << tokens << " at 256x320/p16; params multi " << multi << " < singles " << singles
           << "; LightNet packed (1,64,80," << packed.dim(3) << "," << packed.dim(4) << "); attention row err "
           << sci(row_err) << ", single-token err " << sci(single_err);
}

// ---------------------------------------------------------------------------
// 8. Object insertion on an analytic ground plane.

constexpr std::size_t kH = 64, kW = 80;

SceneLighting uniform_lighting(const std::vector<Vec3>& xi, const std::vector<double>& lam, const std::vector<Vec3>& f) {
  std::size_t K = lam.size();
  std::vector<double> x, l, ff;
  for (std::size_t p = 0; p < kH * kW; ++p)
    for (std::size_t k = 0; k < K; ++k) {
      x.insert(x.end(), xi[k].begin(), xi[k].end());
      l.push_back(lam[k]);
      ff.insert(ff.end(), f[k].begin(), f[k].end());
    }
  return {Tensor({kH, kW, K, 3}, x), Tensor({kH, kW, K}, l), Tensor({kH, kW, K, 3}, ff)};
}

// Ground plane y = -1 below the horizon with normal +y; sky above.
InsertionInputs ground_scene(SceneLighting light, Tensor image) {
  CameraModel cam;
  cam.height = kH;
  cam.width = kW;
  cam.vertical_fov = pi / 3.0;
  std::vector<double> depth(kH * kW, 10.0), normal(kH * kW * 3, 0.0), mask(kH * kW, 0.0);
  for (std::size_t r = 0; r < kH; ++r)
    for (std::size_t c = 0; c < kW; ++c) {
      std::size_t p = r * kW + c;
      Vec3 ray = cam.ray(static_cast<double>(r), static_cast<double>(c));
      normal[p * 3 + 2] = -1.0;
      if (ray[1] < -0.1) {
        depth[p] = -1.0 / ray[1];
        normal[p * 3 + 2] = 0.0;
        normal[p * 3 + 1] = 1.0;
        mask[p] = 1.0;
      }
    }
  return {cam, std::move(image), Tensor({kH, kW}, depth), Tensor({kH, kW, 3}, normal), Tensor({kH, kW}, mask),
          std::move(light)};
}

// Cosine-weighted visible fraction of the upper hemisphere at x with a
// sphere in the way, by brute-force ray tests over the grid directions.
double occlusion_oracle(const Vec3& x, const Vec3& center, double r) {
  const auto& g = direction_grid();
  Frame fr = local_frame({0.0, 1.0, 0.0});
  double all = 0.0, vis = 0.0;
  for (std::size_t q = 0; q < kGridSize; ++q) {
    Vec3 d = fr.to_world(g.dirs[q]);
    if (d[1] <= 0.0) continue;
    double w = d[1] * g.domega[q];
    all += w;
    Vec3 oc = x - center;
    double b = dot(oc, d), c = dot(oc, oc) - r * r;
    bool hit = b * b - c >= 0.0 && (-b + std::sqrt(b * b - c)) > 1e-9;
    if (!hit) vis += w;
  }
  return vis / all;
}

void criterion_insertion(Outcome& o) {
  InsertionSpec spec;
  spec.row = 54;
  spec.col = 40;
  spec.radius = 0.3;

  // Overhead lobe: luminance down the sphere's center column never rises.
  InsertionInputs top = ground_scene(uniform_lighting({{0, 0, 1}}, {8.0}, {{1, 1, 1}}), Tensor::full({kH, kW, 3}, 0.2));
  InsertionResult rt = insert_sphere(top, spec);
  std::vector<double> column;
  for (std::size_t row = 0; row < kH; ++row) {
    std::size_t p = row * kW + spec.col;
    if (rt.sphere_mask[p] == 1.0) column.push_back(rt.image[p * 3] + rt.image[p * 3 + 1] + rt.image[p * 3 + 2]);
  }
  std::size_t rises = 0;
  for (std::size_t i = 1; i < column.size(); ++i) rises += column[i] > column[i - 1];
  o.require(column.size() > 2 && rises == 0 && column.front() > column.back(), "overhead shading monotonicity");

  // Shadow factor range under random lighting.
  Rng rng(8);
  double lo = 1.0, hi = 0.0;
  for (int c = 0; c < 5; ++c) {
    std::vector<Vec3> xi, f;
    std::vector<double> lam;
    for (int k = 0; k < 12; ++k) {
      xi.push_back(normalize(Vec3{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0.1, 1)}));
      lam.push_back(uniform(rng, 0, 30));
      f.push_back({uniform(rng, 0, 3), uniform(rng, 0, 3), uniform(rng, 0, 3)});
    }
    InsertionInputs in = ground_scene(uniform_lighting(xi, lam, f), random_tensor(rng, {kH, kW, 3}, 0, 1));
    InsertionSpec s = spec;
    s.row = uniform_int(rng, 45, 60);
    s.col = uniform_int(rng, 20, 60);
    InsertionResult r = insert_sphere(in, s);
    for (double v : r.shadow.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  o.require(lo >= 0.0 && hi <= 1.0, "shadow range");

  // Isotropic light: darker near contact than at two radii, matching the oracle.
  InsertionInputs iso = ground_scene(uniform_lighting({{0, 0, 1}}, {0.0}, {{1, 1, 1}}), Tensor::full({kH, kW, 3}, 0.5));
  InsertionResult ri = insert_sphere(iso, spec);
  std::size_t near = 0, at2 = 0;
  double best_near = 1e9, best_2r = 1e9, oracle_err = 0.0;
  std::size_t shadowed = 0;
  for (std::size_t p = 0; p < kH * kW; ++p) {
    if (iso.mask_o[p] == 0.0 || ri.sphere_mask[p] == 1.0) continue;
    Vec3 x = iso.camera.unproject(p / kW, p % kW, iso.depth[p]);
    double d = length(x - ri.contact);
    if (d < best_near) best_near = d, near = p;
    if (std::abs(d - 2.0 * spec.radius) < best_2r) best_2r = std::abs(d - 2.0 * spec.radius), at2 = p;
    if (ri.shadow[p] != 1.0) {
      ++shadowed;
      oracle_err = std::max(oracle_err, std::abs(ri.shadow[p] - occlusion_oracle(x, ri.center, spec.radius)));
    }
  }
  double o_near = occlusion_oracle(iso.camera.unproject(near / kW, near % kW, iso.depth[near]), ri.center, spec.radius);
  double o_2r = occlusion_oracle(iso.camera.unproject(at2 / kW, at2 % kW, iso.depth[at2]), ri.center, spec.radius);
  o.require(o_near < o_2r && ri.image[near * 3] < ri.image[at2 * 3], "under-sphere darkening");
  o.require(shadowed > 0 && oracle_err <= kOracleTol, "shadow vs oracle");

  o.detail << "center column " << column.size() << " px, " << rises << " rises; shadow range [" << lo << ", " << hi
           << "]; visibility near contact " << sci(o_near) << " vs 2r " << sci(o_2r) << "; " << shadowed
           << " shadowed px, max oracle diff " << sci(oracle_err);
}

}  // namespace
}  // namespace sgir

int main(int argc, char** argv) {
  using Fn = void (*)(sgir::Outcome&);
  const std::pair<const char*, Fn> criteria[] = {
      {"1 gradient suite", sgir::criterion_gradients},
      {"2 SG energy conservation", sgir::criterion_energy},
      {"3 renderer normalization", sgir::criterion_albedo},
      {"4 scale invariance and loss weights", sgir::criterion_scale_invariance},
      {"5 WHDR and Adam oracles", sgir::criterion_oracles},
      {"6 overfit reproduction", sgir::criterion_overfit},
      {"7 structural checks", sgir::criterion_structure},
      {"8 insertion sanity", sgir::criterion_insertion},
  };
  int failed = 0;
  auto selected = [&](const char* name) {
    if (argc < 2) return true;
    for (int i = 1; i < argc; ++i)
      if (std::string(name).substr(0, std::string(name).find(' ')) == argv[i]) return true;
    return false;
  };
  for (const auto& [name, fn] : criteria) {
    if (!selected(name)) continue;
    sgir::Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
