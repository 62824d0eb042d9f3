// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgir/ops.hpp"
#include "sgir/render.hpp"
#include "sgir/sg.hpp"

namespace sgir {

// Loss weights for albedo, roughness, depth, normals, lighting and
// re-rendering.
struct LossWeights {
  double albedo = 1.5;
  double roughness = 0.5;
  double depth = 0.5;
  double normal = 1.0;
  double lighting = 10.0;
  double rendering = 1.0;

  void validate() const {
    for (double v : {albedo, roughness, depth, normal, lighting, rendering})
      if (!(v >= 0.0)) throw ValidationError("loss weights must be nonnegative");
  }
};

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.albedo = j.value("albedo", w.albedo);
  w.roughness = j.value("roughness", w.roughness);
  w.depth = j.value("depth", w.depth);
  w.normal = j.value("normal", w.normal);
  w.lighting = j.value("lighting", w.lighting);
  w.rendering = j.value("rendering", w.rendering);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"albedo", w.albedo}, {"roughness", w.roughness}, {"depth", w.depth},
       {"normal", w.normal}, {"lighting", w.lighting},   {"rendering", w.rendering}};
}

inline constexpr double kLogFloor = 1e-6;

enum class LossSpace { linear, log };

namespace detail {

// Reshapes a mask of rank <= rank(shape) so it broadcasts over trailing
// channel axes, e.g. (h,w) against (h,w,3).
inline Tensor expand_mask(const Tensor& mask, const Shape& shape) {
  if (mask.rank() > shape.size()) throw ShapeError("mask " + shape_str(mask.shape()) + " exceeds " + shape_str(shape));
  for (std::size_t i = 0; i < mask.rank(); ++i)
    if (mask.dim(i) != shape[i])
      throw ShapeError("mask " + shape_str(mask.shape()) + " does not match " + shape_str(shape));
  Shape s = mask.shape();
  while (s.size() < shape.size()) s.push_back(1);
  return mask.reshaped(s);
}

// Number of masked entries of a tensor with `shape`.
inline double mask_support(const Tensor& mask, const Shape& shape) {
  double m = 0.0;
  for (double v : mask.data()) m += v;
  std::size_t rep = shape_size(shape) / mask.size();
  return m * static_cast<double>(rep);
}

inline void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
  if (pred.shape() != gt.shape())
    throw ShapeError(std::string(op) + ": prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     shape_str(gt.shape()));
}

}  // namespace detail

// s = sum(pred gt m) / sum(pred^2 m), the minimizer of |(s pred - gt) m|^2.
// Differentiable in pred.
inline Tensor lsq_scale(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  using namespace ops;
  detail::check_pair(pred, gt, "lsq_scale");
  Tensor m = detail::expand_mask(mask, pred.shape());
  if (detail::mask_support(m, pred.shape()) <= 0.0) throw ValidationError("lsq_scale: empty mask");
  Tensor den = sum(mul(square(pred), m));
  if (!(den.item() > 0.0)) throw ValidationError("lsq_scale: prediction has zero energy under the mask");
  return mul(sum(mul(mul(pred, gt), m)), power(den, -1.0));
}

// c = masked mean of (log gt - log pred), the minimizer of
// |(log pred + c - log gt) m|^2. Both maps are floored at 1e-6.
inline Tensor lsq_log_offset(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  using namespace ops;
  detail::check_pair(pred, gt, "lsq_log_offset");
  Tensor m = detail::expand_mask(mask, pred.shape());
  double n = detail::mask_support(m, pred.shape());
  if (n <= 0.0) throw ValidationError("lsq_log_offset: empty mask");
  Tensor diff = sub(log(clamp_min(gt, kLogFloor)), log(clamp_min(pred, kLogFloor)));
  return scale(sum(mul(diff, m)), 1.0 / n);
}

// Mean over masked entries of squared residuals after least-squares
// alignment (scale in linear space, offset in log space). The alignment
// scalar is part of the graph.
inline Tensor loss_scale_inv_l2(const Tensor& pred, const Tensor& gt, const Tensor& mask, LossSpace space) {
  using namespace ops;
  detail::check_pair(pred, gt, "loss_scale_inv_l2");
  Tensor m = detail::expand_mask(mask, pred.shape());
  double n = detail::mask_support(m, pred.shape());
  Tensor r;
  if (space == LossSpace::linear) {
    Tensor s = lsq_scale(pred, gt, mask);
    r = sub(mul(pred, s), gt);
  } else {
    if (n <= 0.0) throw ValidationError("lsq_log_offset: empty mask");
    // same offset as lsq_log_offset, sharing the log-ratio map
    Tensor d = sub(log(clamp_min(gt, kLogFloor)), log(clamp_min(pred, kLogFloor)));
    Tensor c = scale(sum(mul(d, m)), 1.0 / n);
    r = sub(c, d);
  }
  return scale(sum(mul(square(r), m)), 1.0 / n);
}

// Log-space loss_scale_inv_l2 as a single tape node. With d = log gt -
// log pred and r = c - d, the gradient is 2 m r / (n pred) where pred
// exceeds the floor and 0 elsewhere (the offset term cancels).
inline Tensor loss_scale_inv_log_fused(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  detail::check_pair(pred, gt, "loss_scale_inv_l2");
  Tensor mexp = detail::expand_mask(mask, pred.shape());
  double n = detail::mask_support(mexp, pred.shape());
  if (n <= 0.0) throw ValidationError("lsq_log_offset: empty mask");
  std::size_t N = pred.size(), rep = N / mask.size();
  auto p = pred.data(), g = gt.data(), m = mask.data();
  std::vector<double> d(N);
  double sd = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    d[i] = std::log(std::max(g[i], kLogFloor)) - std::log(std::max(p[i], kLogFloor));
    sd += m[i / rep] * d[i];
  }
  double c = sd / n, loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    d[i] = c - d[i];  // residual
    loss += m[i / rep] * d[i] * d[i];
  }
  Tensor out = Tensor::scalar(loss / n);
  if (!pred.attached()) return out;
  auto r = std::make_shared<std::vector<double>>(std::move(d));
  return record_op("loss_scale_inv_log", {&pred}, out,
                   [pred, mask, r, n, rep](std::span<const double> go, GradInputs& gin) {
                     auto p = pred.data(), m = mask.data();
                     auto& gp = *gin[0];
                     double k = 2.0 * go[0] / n;
                     for (std::size_t i = 0; i < gp.size(); ++i)
                       if (p[i] > kLogFloor) gp[i] += k * m[i / rep] * (*r)[i] / p[i];
                   });
}

// Per-channel variant of the linear scale-invariant loss: one scale per
// entry of the last axis.
inline Tensor loss_scale_inv_l2_per_channel(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  using namespace ops;
  detail::check_pair(pred, gt, "loss_scale_inv_l2");
  std::size_t C = pred.shape().back();
  Tensor m = detail::expand_mask(mask, pred.shape());
  double n = detail::mask_support(m, pred.shape());
  if (n <= 0.0) throw ValidationError("loss_scale_inv_l2: empty mask");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t c = 0; c < C; ++c) {
    Tensor p = slice(pred, -1, c, c + 1), g = slice(gt, -1, c, c + 1);
    Tensor s = lsq_scale(p, g, mask);
    total = add(total, sum(mul(square(sub(mul(p, s), g)), m)));
  }
  return scale(total, 1.0 / n);
}

inline Tensor loss_l2_masked(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  using namespace ops;
  detail::check_pair(pred, gt, "loss_l2_masked");
  Tensor m = detail::expand_mask(mask, pred.shape());
  double n = detail::mask_support(m, pred.shape());
  if (n <= 0.0) throw ValidationError("loss_l2_masked: empty mask");
  return scale(sum(mul(square(sub(pred, gt)), m)), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Combined losses.

struct BrdfGeoMaps {
  Tensor albedo;     // (h,w,3)
  Tensor roughness;  // (h,w)
  Tensor depth;      // (h,w)
  Tensor normal;     // (h,w,3)
};

struct BrdfGeoTerms {
  double albedo = 0, roughness = 0, depth = 0, normal = 0;
};

struct BrdfGeoLoss {
  Tensor total;
  BrdfGeoTerms terms;
};

inline double weighted_total(const BrdfGeoTerms& t, const LossWeights& w) {
  return w.albedo * t.albedo + w.roughness * t.roughness + w.depth * t.depth + w.normal * t.normal;
}

struct LossOptions {
  bool per_channel_albedo = false;
};

inline BrdfGeoLoss loss_brdfgeo(const BrdfGeoMaps& pred, const BrdfGeoMaps& gt, const Tensor& mask_o,
                                const Tensor& mask_l, const LossWeights& w, const LossOptions& opt = {}) {
  using namespace ops;
  w.validate();
  Tensor la = opt.per_channel_albedo ? loss_scale_inv_l2_per_channel(pred.albedo, gt.albedo, mask_l)
                                     : loss_scale_inv_l2(pred.albedo, gt.albedo, mask_l, LossSpace::linear);
  Tensor lr = loss_l2_masked(pred.roughness, gt.roughness, mask_l);
  Tensor ld = loss_scale_inv_l2(pred.depth, gt.depth, mask_o, LossSpace::log);
  Tensor ln = loss_l2_masked(pred.normal, gt.normal, mask_o);
  Tensor total = add(add(scale(la, w.albedo), scale(lr, w.roughness)), add(scale(ld, w.depth), scale(ln, w.normal)));
  return {total, {la.item(), lr.item(), ld.item(), ln.item()}};
}

struct LightTerms {
  double lighting = 0, rendering = 0;
};

struct LightLoss {
  Tensor total;
  LightTerms terms;
};

// Lighting maps (h,w,16,32,3) compared in log space under mask_l; renders
// (h,w,3) compared in linear space under mask_o. Terms with zero weight are
// skipped.
inline LightLoss loss_light(const Tensor& env_pred, const Tensor& env_gt, const Tensor& img_pred, const Tensor& img_gt,
                            const Tensor& mask_o, const Tensor& mask_l, const LossWeights& w) {
  using namespace ops;
  w.validate();
  LightLoss out{Tensor::scalar(0.0), {}};
  if (w.lighting > 0.0) {
    Tensor ll = loss_scale_inv_log_fused(env_pred, env_gt, mask_l);
    out.terms.lighting = ll.item();
    out.total = add(out.total, scale(ll, w.lighting));
  }
  if (w.rendering > 0.0) {
    Tensor li = loss_scale_inv_l2(img_pred, img_gt, mask_o, LossSpace::linear);
    out.terms.rendering = li.item();
    out.total = add(out.total, scale(li, w.rendering));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ordinal albedo judgements.

enum class OrdinalLabel { equal, point1_darker, point2_darker };

struct OrdinalJudgement {
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  OrdinalLabel label = OrdinalLabel::equal;
  double weight = 1.0;
};

inline OrdinalLabel parse_label(const std::string& s) {
  if (s == "equal" || s == "E") return OrdinalLabel::equal;
  if (s == "point1_darker" || s == "1") return OrdinalLabel::point1_darker;
  if (s == "point2_darker" || s == "2") return OrdinalLabel::point2_darker;
  throw ValidationError("unknown judgement label '" + s + "'");
}

inline std::vector<OrdinalJudgement> judgements_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("judgements: expected a JSON list");
  std::vector<OrdinalJudgement> out;
  try {
    for (const auto& e : j)
      out.push_back({e.at("x1").get<std::size_t>(), e.at("y1").get<std::size_t>(), e.at("x2").get<std::size_t>(),
                     e.at("y2").get<std::size_t>(), parse_label(e.at("label").get<std::string>()),
                     e.value("weight", 1.0)});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("judgements: ") + e.what());
  }
  return out;
}

namespace detail {

inline void check_judgements(const Tensor& albedo, const std::vector<OrdinalJudgement>& js) {
  if (js.empty()) throw ValidationError("no judgements");
  if (albedo.rank() != 3 || albedo.dim(2) != 3) throw ShapeError("judged albedo must be (h,w,3)");
  for (const auto& j : js) {
    if (j.x1 >= albedo.dim(1) || j.x2 >= albedo.dim(1) || j.y1 >= albedo.dim(0) || j.y2 >= albedo.dim(0))
      throw ValidationError("judgement point outside the image");
    if (!(j.weight >= 0.0)) throw ValidationError("judgement weight must be nonnegative");
  }
}

inline double luminance(const Tensor& albedo, std::size_t x, std::size_t y) {
  std::size_t i = (y * albedo.dim(1) + x) * 3;
  return (albedo[i] + albedo[i + 1] + albedo[i + 2]) / 3.0;
}

}  // namespace detail

inline OrdinalLabel predict_relation(double lum1, double lum2, double delta) {
  double r = lum1 / lum2;
  if (r > 1.0 + delta) return OrdinalLabel::point2_darker;
  if (r < 1.0 / (1.0 + delta)) return OrdinalLabel::point1_darker;
  return OrdinalLabel::equal;
}

// Weighted fraction of judgements the albedo map contradicts.
inline double whdr(const Tensor& albedo, const std::vector<OrdinalJudgement>& js, double delta = 0.1) {
  detail::check_judgements(albedo, js);
  double err = 0.0, total = 0.0;
  for (const auto& j : js) {
    double l1 = detail::luminance(albedo, j.x1, j.y1), l2 = detail::luminance(albedo, j.x2, j.y2);
    if (!(l1 > 0.0 && l2 > 0.0)) throw DomainError("whdr: albedo must be positive at judged pixels");
    total += j.weight;
    if (predict_relation(l1, l2, delta) != j.label) err += j.weight;
  }
  if (!(total > 0.0)) throw ValidationError("whdr: judgement weights sum to zero");
  return err / total;
}

// Weighted squared hinge on log-luminance differences with margin
// log(1 + delta). Differentiable surrogate for whdr.
inline Tensor relative_albedo_loss(const Tensor& albedo, const std::vector<OrdinalJudgement>& js, double delta = 0.1) {
  using namespace ops;
  detail::check_judgements(albedo, js);
  double margin = std::log1p(delta);
  std::size_t w = albedo.dim(1);
  Tensor lum = mean(albedo, -1);  // (h,w)
  Tensor flat = reshape(lum, {lum.size()});
  Tensor total = Tensor::scalar(0.0);
  double wsum = 0.0;
  for (const auto& j : js) {
    Tensor l1 = slice(flat, 0, j.y1 * w + j.x1, j.y1 * w + j.x1 + 1);
    Tensor l2 = slice(flat, 0, j.y2 * w + j.x2, j.y2 * w + j.x2 + 1);
    Tensor d = sub(log(l1), log(l2));
    Tensor term;
    switch (j.label) {
      case OrdinalLabel::equal:  // max(0, |d| - m) = relu(d - m) + relu(-d - m)
        term = square(add(max_with_zero(shift(d, -margin)), max_with_zero(shift(scale(d, -1.0), -margin))));
        break;
      case OrdinalLabel::point1_darker:
        term = square(max_with_zero(shift(d, margin)));
        break;
      case OrdinalLabel::point2_darker:
        term = square(max_with_zero(shift(scale(d, -1.0), margin)));
        break;
    }
    total = add(total, scale(sum(term), j.weight));
    wsum += j.weight;
  }
  if (!(wsum > 0.0)) throw ValidationError("relative_albedo_loss: judgement weights sum to zero");
  return scale(total, 1.0 / wsum);
}

// ---------------------------------------------------------------------------
// Normal angular error.

struct AngularStats {
  double mean_deg = 0.0;
  double median_deg = 0.0;
};

inline AngularStats normal_angular_stats(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  detail::check_pair(pred, gt, "normal_angular_stats");
  if (pred.rank() < 1 || pred.shape().back() != 3) throw ShapeError("normal_angular_stats: expected (...,3) normals");
  std::size_t P = pred.size() / 3;
  if (mask.size() != P) throw ShapeError("normal_angular_stats: mask does not match normals");
  std::vector<double> angles;
  auto a = pred.data(), b = gt.data(), m = mask.data();
  for (std::size_t p = 0; p < P; ++p) {
    if (m[p] == 0.0) continue;
    double c = a[p * 3] * b[p * 3] + a[p * 3 + 1] * b[p * 3 + 1] + a[p * 3 + 2] * b[p * 3 + 2];
    angles.push_back(std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi);
  }
  if (angles.empty()) throw ValidationError("normal_angular_stats: empty mask");
  AngularStats s;
  for (double v : angles) s.mean_deg += v;
  s.mean_deg /= static_cast<double>(angles.size());
  std::sort(angles.begin(), angles.end());
  std::size_t n = angles.size();
  s.median_deg = n % 2 ? angles[n / 2] : 0.5 * (angles[n / 2 - 1] + angles[n / 2]);
  return s;
}

}  // namespace sgir
