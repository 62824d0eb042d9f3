// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgir/losses.hpp"
#include "sgir/manifest.hpp"
#include "sgir/models.hpp"
#include "sgir/render.hpp"

namespace sgir {

// ---------------------------------------------------------------------------
// Scene sources.

// Exactly one of: generated scenes, explicit manifest paths, or a directory
// searched for */manifest.json.
struct SceneSource {
  std::size_t generate_count = 0;
  std::uint64_t generate_seed = 0;
  GeneratorConfig generator;
  std::vector<std::string> manifests;
  std::string dir;
};

inline SceneSource scene_source_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scenes: expected an object");
  SceneSource s;
  int kinds = int(j.contains("generate")) + int(j.contains("manifests")) + int(j.contains("dir"));
  if (kinds != 1) throw ValidationError("scenes: specify exactly one of 'generate', 'manifests', 'dir'");
  try {
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      s.generate_count = g.at("count").get<std::size_t>();
      s.generate_seed = g.value("seed", std::uint64_t{0});
      if (g.contains("config")) s.generator = g.at("config").get<GeneratorConfig>();
      s.generator.validate();
      if (s.generate_count == 0) throw ValidationError("scenes: generate.count must be positive");
    } else if (j.contains("manifests")) {
      s.manifests = j.at("manifests").get<std::vector<std::string>>();
      if (s.manifests.empty()) throw ValidationError("scenes: manifest list is empty");
    } else {
      s.dir = j.at("dir").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenes: ") + e.what());
  }
  return s;
}

// Scene i of a generated set uses seed base + i.
inline std::uint64_t scene_seed(std::uint64_t base, std::size_t i) { return base + i; }

inline std::vector<std::string> find_manifests(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError("scene directory '" + dir + "' not found");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back((e.path() / "manifest.json").string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValidationError("no scene manifests under '" + dir + "'");
  return out;
}

inline std::vector<Scene> load_scenes(const SceneSource& s) {
  std::vector<Scene> out;
  if (s.generate_count) {
    for (std::size_t i = 0; i < s.generate_count; ++i) out.push_back(generate_scene(scene_seed(s.generate_seed, i), s.generator));
    return out;
  }
  auto paths = s.dir.empty() ? s.manifests : find_manifests(s.dir);
  for (const auto& p : paths) out.push_back(load_scene(p));
  for (const auto& sc : out)
    if (!(sc.buffers.camera == out.front().buffers.camera)) throw ValidationError("scenes must share one camera");
  return out;
}

// ---------------------------------------------------------------------------
// Configuration.

enum class LightMode { direct, full };

struct TrainConfig {
  int stage = 1;
  SceneSource scenes;
  std::size_t batch_size = 2;
  double lr = 1e-4;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  LossWeights weights;
  DPTConfig model;
  LightMode lightnet_mode = LightMode::full;
  std::string brdfgeo_checkpoint;  // stage 2, full mode
  std::string out;                 // output directory; empty writes nothing
  bool clip_grad = false;          // clip the global gradient norm at 1.0

  void validate() const {
    if (stage != 1 && stage != 2) throw ValidationError("train config: stage must be 1 or 2");
    if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train config: lr must be positive");
    weights.validate();
    model.validate();
    if (stage == 1 && model.is_light()) throw ValidationError("train config: stage 1 trains a BRDF/geometry model");
    if (stage == 2 && !model.is_light()) throw ValidationError("train config: stage 2 trains a lighting model");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("train config: expected a JSON object");
  static const std::vector<std::string> known = {"stage", "scenes", "batch_size", "lr", "steps", "seed", "weights",
                                                 "model", "lightnet_mode", "brdfgeo_checkpoint", "out", "clip_grad"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("train config: unknown key '" + k + "'");
  TrainConfig c;
  try {
    c.stage = j.value("stage", 1);
    if (!j.contains("scenes")) throw ValidationError("train config: missing 'scenes'");
    c.scenes = scene_source_from_json(j.at("scenes"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    if (j.contains("steps") && j.at("steps").is_number_integer() && j.at("steps").get<long long>() < 0)
      throw ValidationError("train config: steps must be nonnegative");
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
    std::string lm = j.value("lightnet_mode", std::string("full"));
    if (lm != "direct" && lm != "full") throw ValidationError("train config: lightnet_mode must be 'direct' or 'full'");
    c.lightnet_mode = lm == "direct" ? LightMode::direct : LightMode::full;
    nlohmann::json mj = j.value("model", nlohmann::json::object());
    if (!mj.contains("seed")) mj["seed"] = c.seed;
    if (!mj.contains("mode"))
      mj["mode"] = c.stage == 1 ? "multi_task" : (c.lightnet_mode == LightMode::direct ? "lightnet_direct" : "lightnet_full");
    if (c.stage == 2 && !mj.contains("head_bn")) mj["head_bn"] = false;
    if (!c.scenes.generate_count) {
      // image size comes from the scenes when the model does not pin it
    } else {
      if (!mj.contains("h")) mj["h"] = c.scenes.generator.height;
      if (!mj.contains("w")) mj["w"] = c.scenes.generator.width;
    }
    c.model = mj.get<DPTConfig>();
    c.brdfgeo_checkpoint = j.value("brdfgeo_checkpoint", std::string{});
    c.out = j.value("out", std::string{});
    c.clip_grad = j.value("clip_grad", false);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  if (c.stage == 2 && c.lightnet_mode == LightMode::full && c.model.mode != ModelMode::light_full)
    throw ValidationError("train config: lightnet_mode 'full' needs model mode lightnet_full");
  if (c.stage == 2 && c.lightnet_mode == LightMode::direct && c.model.mode != ModelMode::light_direct)
    throw ValidationError("train config: lightnet_mode 'direct' needs model mode lightnet_direct");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reports.

struct StepRecord {
  std::size_t step = 0;
  double total = 0.0;
  std::map<std::string, double> terms;
};

struct TrainReport {
  int stage = 1;
  std::vector<StepRecord> steps;
  double wall_seconds = 0.0;
  std::string checkpoint;
  std::string digest;
  std::string frozen_digest_before, frozen_digest_after;
  bool aborted = false;
  std::size_t failed_step = 0;
  std::string error;
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) steps.push_back({{"step", s.step}, {"total", s.total}, {"terms", s.terms}});
  nlohmann::json j = {{"stage", r.stage},           {"steps", steps},     {"wall_seconds", r.wall_seconds},
                      {"checkpoint", r.checkpoint}, {"digest", r.digest}, {"aborted", r.aborted}};
  if (r.aborted) {
    j["failed_step"] = r.failed_step;
    j["error"] = r.error;
  }
  if (!r.frozen_digest_before.empty()) {
    j["frozen_digest_before"] = r.frozen_digest_before;
    j["frozen_digest_after"] = r.frozen_digest_after;
  }
  return j;
}

struct TrainResult {
  Model model;
  TrainReport report;
};

// ---------------------------------------------------------------------------
// Shared training machinery.

namespace detail {

inline std::map<std::string, Tensor> grads_or_zero(const Tape& tape, const Tensor& loss, const ParamSet& bound) {
  if (loss.attached()) return gather_grads(bound, backward(tape, loss));
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : bound) out.emplace(name, Tensor::zeros(t.shape()));
  return out;
}

inline void clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) s += v * v;
  double n = std::sqrt(s);
  if (!(n > max_norm)) return;
  for (auto& [_, g] : grads)
    for (auto& v : g.mutable_data()) v *= max_norm / n;
}

inline bool all_finite(const std::map<std::string, Tensor>& grads) {
  for (const auto& [_, g] : grads)
    for (double v : g.data())
      if (!std::isfinite(v)) return false;
  return true;
}

// Epoch-wise shuffled batch order, reproducible from the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(std::min(batch, n)), rng_(seed) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline Tensor stack(const std::vector<Tensor>& xs) {
  std::vector<Tensor> rs;
  for (const auto& x : xs) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    rs.push_back(x.reshaped(s));
  }
  return ops::concat(rs, 0);
}

inline void check_model_fits(const DPTConfig& m, const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw ValidationError("no training scenes");
  const auto& cam = scenes.front().buffers.camera;
  if (cam.height != m.h || cam.width != m.w)
    throw ShapeError("model resolution " + std::to_string(m.h) + "x" + std::to_string(m.w) + " does not match scenes " +
                     std::to_string(cam.height) + "x" + std::to_string(cam.width));
}

inline BrdfGeoMaps gt_maps(const Scene& s) {
  const auto& b = s.buffers;
  return {b.albedo, b.roughness, b.depth, b.normal};
}

inline void write_outputs(const std::string& out, const Model& m, TrainReport& r) {
  namespace fs = std::filesystem;
  r.digest = param_digest(m.params);
  if (out.empty()) return;
  fs::create_directories(out);
  r.checkpoint = (fs::path(out) / "model.ckpt").string();
  save_model(r.checkpoint, m);
  std::ofstream f(fs::path(out) / "report.json");
  if (!f) throw IoError("cannot write report in '" + out + "'");
  f << to_json(r).dump(2) << '\n';
}

inline void write_failure(const std::string& out, const TrainReport& r) {
  namespace fs = std::filesystem;
  if (out.empty()) return;
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "report.json");
  if (f) f << to_json(r).dump(2) << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: BRDF/geometry network on L_BRDFGeo.

// Mean loss_brdfgeo over the listed scenes for a model evaluated on `params`.
inline BrdfGeoLoss stage1_loss(const DPTConfig& cfg, const ParamSet& params, const std::vector<Scene>& scenes,
                               const std::vector<std::size_t>& idx, const LossWeights& w) {
  std::vector<Tensor> imgs;
  for (auto i : idx) imgs.push_back(scenes[i].buffers.image);
  BrdfGeoOutput pred = brdfgeo_forward(cfg, params, detail::stack(imgs));
  BrdfGeoLoss out{Tensor::scalar(0.0), {}};
  double inv = 1.0 / static_cast<double>(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = scenes[idx[b]];
    auto l = loss_brdfgeo(pred.element(b), detail::gt_maps(s), s.buffers.mask_o, s.buffers.mask_l, w);
    out.total = ops::add(out.total, ops::scale(l.total, inv));
    out.terms.albedo += inv * l.terms.albedo;
    out.terms.roughness += inv * l.terms.roughness;
    out.terms.depth += inv * l.terms.depth;
    out.terms.normal += inv * l.terms.normal;
  }
  return out;
}

inline TrainResult train_stage1(const TrainConfig& cfg, const std::vector<Scene>& scenes) {
  cfg.validate();
  if (cfg.stage != 1) throw ValidationError("train_stage1: config is for stage " + std::to_string(cfg.stage));
  if (cfg.model.mode != ModelMode::multi_task && cfg.model.mode != ModelMode::single_task)
    throw ValidationError("train_stage1: model must be a BRDF/geometry network");
  detail::check_model_fits(cfg.model, scenes);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult res{init_model(cfg.model), {}};
  res.report.stage = 1;
  AdamState adam;
  adam.lr = cfg.lr;
  detail::BatchSampler sampler(scenes.size(), cfg.batch_size, cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto idx = sampler.next();
    Tape tape;
    ParamSet bound = bind_params(res.model.params, tape);
    BrdfGeoLoss l = stage1_loss(cfg.model, bound, scenes, idx, cfg.weights);
    double total = l.total.item();
    auto grads = detail::grads_or_zero(tape, l.total, bound);
    if (!std::isfinite(total) || !detail::all_finite(grads)) {
      res.report.aborted = true;
      res.report.failed_step = step;
      res.report.error = "non-finite loss at step " + std::to_string(step);
      break;
    }
    if (cfg.clip_grad) detail::clip_global_norm(grads, 1.0);
    adam_step(res.model.params, grads, adam);
    round_to_storage(res.model.params);
    res.report.steps.push_back({step,
                                total,
                                {{"albedo", l.terms.albedo},
                                 {"roughness", l.terms.roughness},
                                 {"depth", l.terms.depth},
                                 {"normal", l.terms.normal}}});
  }
  res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (res.report.aborted) {
    detail::write_failure(cfg.out, res.report);
    return res;
  }
  detail::write_outputs(cfg.out, res.model, res.report);
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2: lighting network through the renderer, BRDF/geometry frozen.

// Per-scene constants for stage 2: network input, cached render weights
// and the ground-truth lighting map.
struct Stage2Scene {
  Tensor input;    // (h,w,C)
  Tensor weights;  // (P,512,3)
  Tensor env_gt;   // (h,w,16,32,3)
  Tensor image, mask_o, mask_l;
  CameraModel camera;
};

// Direct mode renders with the ground-truth buffers; full mode feeds and
// renders the frozen network's predictions.
inline std::vector<Stage2Scene> prepare_stage2(const std::vector<Scene>& scenes, LightMode mode, const Model* brdfgeo,
                                               bool need_weights = true) {
  std::vector<Stage2Scene> out;
  if (mode == LightMode::full && !brdfgeo) throw ValidationError("full-mode stage 2 needs a stage-1 checkpoint");
  for (const auto& s : scenes) {
    const auto& b = s.buffers;
    Stage2Scene p;
    p.camera = b.camera;
    p.image = b.image;
    p.mask_o = b.mask_o;
    p.mask_l = b.mask_l;
    p.env_gt = rasterize_sg(s.lighting.xi, s.lighting.lam, s.lighting.f);
    RenderInputs ri = b.render_inputs();
    if (mode == LightMode::full) {
      BrdfGeoOutput pred = brdfgeo_forward(*brdfgeo, b.image);
      BrdfGeoMaps m = pred.element(0);
      ri = {m.depth, m.normal, m.albedo, m.roughness};
      p.input = batch_element(lightnet_input(b.image, pred), 0);
    } else {
      p.input = b.image;
    }
    if (need_weights) p.weights = render_weights(ri, b.camera);
    out.push_back(std::move(p));
  }
  return out;
}

inline LightLoss stage2_loss(const DPTConfig& cfg, const ParamSet& params, const std::vector<Stage2Scene>& data,
                             const std::vector<std::size_t>& idx, const LossWeights& w) {
  std::vector<Tensor> inputs;
  for (auto i : idx) inputs.push_back(data[i].input);
  LightOutput pred = lightnet_forward(cfg, params, detail::stack(inputs));
  LightLoss out{Tensor::scalar(0.0), {}};
  double inv = 1.0 / static_cast<double>(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& d = data[idx[b]];
    Tensor env = rasterize_sg(batch_element(pred.xi, b), batch_element(pred.lam, b), batch_element(pred.f, b));
    Tensor img = w.rendering > 0.0 ? apply_render_weights(d.weights, env, d.camera) : d.image;
    auto l = loss_light(env, d.env_gt, img, d.image, d.mask_o, d.mask_l, w);
    out.total = ops::add(out.total, ops::scale(l.total, inv));
    out.terms.lighting += inv * l.terms.lighting;
    out.terms.rendering += inv * l.terms.rendering;
  }
  return out;
}

// Gradient of the stage-2 objective for one batch, keyed by parameter.
inline std::map<std::string, Tensor> stage2_gradients(const Model& light, const std::vector<Stage2Scene>& data,
                                                      const std::vector<std::size_t>& idx, const LossWeights& w) {
  Tape tape;
  ParamSet bound = bind_params(light.params, tape);
  LightLoss l = stage2_loss(light.cfg, bound, data, idx, w);
  return detail::grads_or_zero(tape, l.total, bound);
}

inline TrainResult train_stage2(const TrainConfig& cfg, const std::vector<Scene>& scenes, const Model* frozen) {
  cfg.validate();
  if (cfg.stage != 2) throw ValidationError("train_stage2: config is for stage " + std::to_string(cfg.stage));
  detail::check_model_fits(cfg.model, scenes);
  if (cfg.lightnet_mode == LightMode::full) {
    if (!frozen) throw ValidationError("full-mode stage 2 needs a stage-1 checkpoint");
    if (frozen->cfg.mode != ModelMode::multi_task)
      throw ValidationError("stage-1 checkpoint must hold a multi-task BRDF/geometry model");
    detail::check_model_fits(frozen->cfg, scenes);
  }
  auto t0 = std::chrono::steady_clock::now();
  TrainResult res{init_model(cfg.model), {}};
  res.report.stage = 2;
  const Model* fz = cfg.lightnet_mode == LightMode::full ? frozen : nullptr;
  if (fz) res.report.frozen_digest_before = param_digest(fz->params);
  auto data = prepare_stage2(scenes, cfg.lightnet_mode, fz, cfg.weights.rendering > 0.0);
  AdamState adam;
  adam.lr = cfg.lr;
  detail::BatchSampler sampler(scenes.size(), cfg.batch_size, cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto idx = sampler.next();
    Tape tape;
    ParamSet bound = bind_params(res.model.params, tape);
    LightLoss l = stage2_loss(cfg.model, bound, data, idx, cfg.weights);
    double total = l.total.item();
    auto grads = detail::grads_or_zero(tape, l.total, bound);
    if (!std::isfinite(total) || !detail::all_finite(grads)) {
      res.report.aborted = true;
      res.report.failed_step = step;
      res.report.error = "non-finite loss at step " + std::to_string(step);
      break;
    }
    if (cfg.clip_grad) detail::clip_global_norm(grads, 1.0);
    adam_step(res.model.params, grads, adam);
    round_to_storage(res.model.params);
    res.report.steps.push_back({step, total, {{"lighting", l.terms.lighting}, {"rendering", l.terms.rendering}}});
  }
  if (fz) {
    res.report.frozen_digest_after = param_digest(fz->params);
    if (res.report.frozen_digest_after != res.report.frozen_digest_before)
      throw Error("frozen BRDF/geometry parameters changed during stage 2");
  }
  res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (res.report.aborted) {
    detail::write_failure(cfg.out, res.report);
    return res;
  }
  detail::write_outputs(cfg.out, res.model, res.report);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation.

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> n = {"L_A", "L_R", "L_D", "L_N", "L_L", "L_I",
                                             "normal_mean_deg", "normal_median_deg", "WHDR"};
  return n;
}

// Angles are reported in degrees; every other metric also in a 1e-2 base.
inline bool metric_in_base(const std::string& name) { return name.rfind("normal_", 0) != 0; }

// Per-scene predictions; absent modalities stay empty.
struct ScenePrediction {
  std::optional<BrdfGeoMaps> brdfgeo;
  std::optional<SceneLighting> lighting;  // (h,w,K,...) lobes
};

struct EvalReport {
  std::size_t scenes = 0;
  std::map<std::string, std::optional<double>> metrics;
};

// Means over scenes. L_I renders the predicted lighting with the predicted
// BRDF/geometry when present and the ground truth otherwise.
inline EvalReport evaluate_predictions(const std::vector<ScenePrediction>& preds, const std::vector<Scene>& scenes,
                                       const std::vector<OrdinalJudgement>* judgements = nullptr) {
  if (preds.size() != scenes.size()) throw ValidationError("evaluate: prediction and scene counts differ");
  if (scenes.empty()) throw ValidationError("evaluate: no scenes");
  EvalReport r;
  r.scenes = scenes.size();
  for (const auto& n : metric_names()) r.metrics[n] = std::nullopt;
  std::map<std::string, double> acc;
  bool have_geo = true, have_light = true;
  for (const auto& p : preds) {
    have_geo = have_geo && p.brdfgeo.has_value();
    have_light = have_light && p.lighting.has_value();
  }
  LossWeights unit{1, 1, 1, 1, 1, 1};
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const auto& b = s.buffers;
    if (have_geo) {
      const auto& m = *preds[i].brdfgeo;
      auto l = loss_brdfgeo(m, detail::gt_maps(s), b.mask_o, b.mask_l, unit);
      acc["L_A"] += l.terms.albedo;
      acc["L_R"] += l.terms.roughness;
      acc["L_D"] += l.terms.depth;
      acc["L_N"] += l.terms.normal;
      auto a = normal_angular_stats(m.normal, b.normal, b.mask_o);
      acc["normal_mean_deg"] += a.mean_deg;
      acc["normal_median_deg"] += a.median_deg;
      if (judgements) acc["WHDR"] += whdr(m.albedo, *judgements);
    }
    if (have_light) {
      const auto& lp = *preds[i].lighting;
      Tensor env = rasterize_sg(lp.xi, lp.lam, lp.f);
      Tensor env_gt = rasterize_sg(s.lighting.xi, s.lighting.lam, s.lighting.f);
      RenderInputs ri = b.render_inputs();
      if (have_geo) {
        const auto& m = *preds[i].brdfgeo;
        ri = {m.depth, m.normal, m.albedo, m.roughness};
      }
      Tensor img = render_image(ri, env, b.camera);
      auto l = loss_light(env, env_gt, img, b.image, b.mask_o, b.mask_l, unit);
      acc["L_L"] += l.terms.lighting;
      acc["L_I"] += l.terms.rendering;
    }
  }
  for (const auto& [k, v] : acc) r.metrics[k] = v / static_cast<double>(scenes.size());
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json raw = nlohmann::json::object(), base = nlohmann::json::object();
  for (const auto& n : metric_names()) {
    const auto& v = r.metrics.at(n);
    raw[n] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    base[n] = v ? nlohmann::json(metric_in_base(n) ? *v * 100.0 : *v) : nlohmann::json(nullptr);
  }
  return {{"scenes", r.scenes}, {"metrics", raw}, {"metrics_base_1e-2", base}};
}

// Aligned text table: metric, value in the 1e-2 base (degrees for angles).
inline std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "metric" << std::right << std::setw(14) << "value" << "  unit\n";
  for (const auto& n : metric_names()) {
    const auto& v = r.metrics.at(n);
    os << std::left << std::setw(20) << n << std::right << std::setw(14);
    if (!v) {
      os << "absent";
    } else {
      std::ostringstream num;
      num << std::fixed << std::setprecision(4) << (metric_in_base(n) ? *v * 100.0 : *v);
      os << num.str();
    }
    os << "  " << (metric_in_base(n) ? "x1e-2" : "deg") << '\n';
  }
  return os.str();
}

// Predictions from trained models. `brdfgeo` may be null (no BRDF/geometry
// metrics); `light` may be null (no lighting metrics).
inline std::vector<ScenePrediction> predict_scenes(const std::vector<Scene>& scenes, const Model* brdfgeo,
                                                   const Model* light) {
  std::vector<ScenePrediction> out;
  for (const auto& s : scenes) {
    ScenePrediction p;
    std::optional<BrdfGeoOutput> geo;
    if (brdfgeo) {
      geo = brdfgeo_forward(*brdfgeo, s.buffers.image);
      p.brdfgeo = geo->element(0);
    }
    if (light) {
      Tensor in = s.buffers.image;
      if (light->cfg.mode == ModelMode::light_full) {
        if (!geo) throw ValidationError("full-mode lighting evaluation needs a BRDF/geometry checkpoint");
        in = lightnet_input(s.buffers.image, *geo);
      }
      LightOutput lo = lightnet_forward(*light, in);
      p.lighting = SceneLighting{batch_element(lo.xi, 0), batch_element(lo.lam, 0), batch_element(lo.f, 0)};
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace sgir
