// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sgir/image_io.hpp"
#include "sgir/insert.hpp"
#include "sgir/manifest.hpp"
#include "sgir/models.hpp"
#include "sgir/train.hpp"

namespace sgir::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw ValidationError(std::string(what) + " '" + path + "' not found");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(what) + " '" + path + "': " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  std::size_t count = 1;
};

inline std::string scene_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", i);
  return buf;
}

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  GeneratorConfig cfg;
  if (!a.config.empty()) {
    auto j = read_json_file(a.config, "generator config");
    try {
      cfg = j.get<GeneratorConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("generator config: ") + e.what());
    }
  }
  cfg.validate();
  if (a.count == 0) throw ValidationError("--count must be positive");
  if (a.out.empty()) throw ValidationError("--out is required");
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < a.count; ++i) scenes.push_back(generate_scene(scene_seed(a.seed, i), cfg));
  for (std::size_t i = 0; i < a.count; ++i) {
    auto path = save_scene((std::filesystem::path(a.out) / scene_dir_name(i)).string(), scenes[i]);
    out << path << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string manifest, out, preview;
  double exposure = 1.0;
  bool zero_lighting = false;
};

inline Tensor render_scene(const Scene& s, bool zero_lighting) {
  const auto& b = s.buffers;
  Tensor env = rasterize_sg(s.lighting.xi, s.lighting.lam, s.lighting.f);
  if (zero_lighting) env = Tensor::zeros(env.shape());
  return render_image(b.render_inputs(), env, b.camera);
}

inline int cmd_render(const RenderArgs& a, std::ostream& out) {
  if (a.out.empty() && a.preview.empty()) throw ValidationError("render needs --out and/or --preview");
  if (!(a.exposure > 0.0)) throw ValidationError("--exposure must be positive");
  Scene s = load_scene(a.manifest);
  Tensor img = render_scene(s, a.zero_lighting);
  if (!a.out.empty()) write_pfm(a.out, img);
  if (!a.preview.empty()) write_png_preview(a.preview, img, a.exposure);
  out << "rendered " << s.buffers.camera.width << "x" << s.buffers.camera.height << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto j = read_json_file(a.config, "train config");
  if (a.seed) j["seed"] = *a.seed;
  if (!a.out.empty()) j["out"] = a.out;
  TrainConfig cfg = train_config_from_json(j);
  if (cfg.out.empty()) throw ValidationError("train config: 'out' (or --out) is required");
  std::optional<Model> frozen;
  if (cfg.stage == 2 && cfg.lightnet_mode == LightMode::full) {
    if (cfg.brdfgeo_checkpoint.empty())
      throw ValidationError("full-mode stage 2 needs 'brdfgeo_checkpoint' (a stage-1 checkpoint)");
    frozen = load_model(cfg.brdfgeo_checkpoint);
  }
  auto scenes = load_scenes(cfg.scenes);
  TrainResult r = cfg.stage == 1 ? train_stage1(cfg, scenes) : train_stage2(cfg, scenes, frozen ? &*frozen : nullptr);
  if (r.report.aborted) {
    std::cerr << "error: " << r.report.error << '\n';
    return kExitRuntime;
  }
  out << "stage " << cfg.stage << ": " << r.report.steps.size() << " steps";
  if (!r.report.steps.empty())
    out << ", loss " << r.report.steps.front().total << " -> " << r.report.steps.back().total;
  out << "\ncheckpoint " << r.report.checkpoint << " (" << r.report.digest << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string config, out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto j = read_json_file(a.config, "eval config");
  if (!j.is_object()) throw ValidationError("eval config: expected a JSON object");
  static const std::vector<std::string> known = {"scenes", "brdfgeo_checkpoint", "lightnet_checkpoint", "judgements",
                                                 "out"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("eval config: unknown key '" + k + "'");
  if (!j.contains("scenes")) throw ValidationError("eval config: missing 'scenes'");
  std::string dir = a.out.empty() ? j.value("out", std::string{}) : a.out;
  if (dir.empty()) throw ValidationError("eval config: 'out' (or --out) is required");
  SceneSource src = scene_source_from_json(j.at("scenes"));
  std::optional<Model> geo, light;
  if (j.contains("brdfgeo_checkpoint")) geo = load_model(j.at("brdfgeo_checkpoint").get<std::string>());
  if (j.contains("lightnet_checkpoint")) light = load_model(j.at("lightnet_checkpoint").get<std::string>());
  if (geo && geo->cfg.is_light()) throw ValidationError("eval config: brdfgeo_checkpoint holds a lighting model");
  if (light && !light->cfg.is_light()) throw ValidationError("eval config: lightnet_checkpoint holds a BRDF/geometry model");
  if (light && light->cfg.mode == ModelMode::light_full && !geo)
    throw ValidationError("eval config: a full-mode lighting model needs brdfgeo_checkpoint");
  std::optional<std::vector<OrdinalJudgement>> js;
  if (j.contains("judgements")) js = judgements_from_json(read_json_file(j.at("judgements").get<std::string>(), "judgements"));
  auto scenes = load_scenes(src);
  auto preds = predict_scenes(scenes, geo ? &*geo : nullptr, light ? &*light : nullptr);
  EvalReport r = evaluate_predictions(preds, scenes, js ? &*js : nullptr);
  std::string table = format_table(r);
  write_text((std::filesystem::path(dir) / "eval.json").string(), to_json(r).dump(2) + "\n");
  write_text((std::filesystem::path(dir) / "eval.txt").string(), table);
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// attn

struct AttnArgs {
  std::string checkpoint, image, out, raw;
  std::size_t layer = 0, head = 0, patch = 0;
};

// Attention row of `patch` as an image-sized heatmap in [0,1] (row-max
// normalized, nearest upsampling), plus the raw row.
struct AttentionHeatmap {
  Tensor heat;  // (h,w)
  std::vector<double> row;
};

inline AttentionHeatmap attention_heatmap(const Model& m, const Tensor& image, std::size_t layer, std::size_t head,
                                          std::size_t patch) {
  Tensor A = attention_extract(m, image, layer, head);
  std::size_t N = A.dim(0);
  if (patch >= N) throw ValidationError("patch " + std::to_string(patch) + " out of range [0, " + std::to_string(N) + ")");
  AttentionHeatmap out;
  out.row.assign(A.data().begin() + static_cast<long>(patch * N), A.data().begin() + static_cast<long>((patch + 1) * N));
  double mx = *std::max_element(out.row.begin(), out.row.end());
  const auto& c = m.cfg;
  std::vector<double> heat(c.h * c.w);
  for (std::size_t r = 0; r < c.h; ++r)
    for (std::size_t col = 0; col < c.w; ++col) heat[r * c.w + col] = out.row[(r / c.p) * c.grid_w() + col / c.p] / mx;
  out.heat = Tensor({c.h, c.w}, std::move(heat));
  return out;
}

inline Image8 heatmap_image(const AttentionHeatmap& hm, const DPTConfig& c, std::size_t patch) {
  Image8 img{c.w, c.h, 3, std::vector<std::uint8_t>(c.w * c.h * 3)};
  std::size_t pr = patch / c.grid_w() * c.p, pc = patch % c.grid_w() * c.p;
  for (std::size_t r = 0; r < c.h; ++r)
    for (std::size_t col = 0; col < c.w; ++col) {
      auto v = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(hm.heat[r * c.w + col], 0.0, 1.0)));
      std::size_t i = (r * c.w + col) * 3;
      img.pixels[i] = img.pixels[i + 1] = img.pixels[i + 2] = v;
      bool border = r >= pr && r < pr + c.p && col >= pc && col < pc + c.p &&
                    (r == pr || r == pr + c.p - 1 || col == pc || col == pc + c.p - 1);
      if (border) {
        img.pixels[i] = 255;
        img.pixels[i + 1] = 0;
        img.pixels[i + 2] = 0;
      }
    }
  return img;
}

inline Tensor read_input_image(const std::string& path) {
  if (std::filesystem::path(path).filename() == "manifest.json") return load_scene(path).buffers.image;
  return read_pfm(path);
}

inline int cmd_attn(const AttnArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ValidationError("--out is required");
  Model m = load_model(a.checkpoint);
  Tensor image = read_input_image(a.image);
  if (m.cfg.mode == ModelMode::light_full)
    throw ValidationError("attn: full-mode lighting models need BRDF/geometry inputs; use an image model");
  AttentionHeatmap hm = attention_heatmap(m, image, a.layer, a.head, a.patch);
  write_png(a.out, heatmap_image(hm, m.cfg, a.patch));
  if (!a.raw.empty()) write_text(a.raw, nlohmann::json(hm.row).dump() + "\n");
  double s = 0.0;
  for (double v : hm.row) s += v;
  out << "attention row " << a.patch << " sums to " << s << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// insert

struct InsertArgs {
  std::string manifest, brdfgeo, lightnet, out, out_pfm;
  std::size_t row = 0, col = 0;
  double radius = 0.1, roughness = 0.5, exposure = 1.0;
  std::vector<double> albedo{0.8, 0.8, 0.8};
};

// Predictions come from the manifest's buffers, or from the given
// checkpoints when both are supplied.
inline int cmd_insert(const InsertArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ValidationError("--out is required");
  if (a.albedo.size() != 3) throw ValidationError("--albedo takes three values");
  if (!(a.exposure > 0.0)) throw ValidationError("--exposure must be positive");
  if (a.brdfgeo.empty() != a.lightnet.empty())
    throw ValidationError("--brdfgeo and --lightnet must be given together");
  Scene s = load_scene(a.manifest);
  const auto& b = s.buffers;
  InsertionInputs in{b.camera, b.image, b.depth, b.normal, b.mask_o, s.lighting};
  InsertionSpec spec{a.row, a.col, a.radius, {a.albedo[0], a.albedo[1], a.albedo[2]}, a.roughness};
  spec.validate(b.camera);
  if (!a.brdfgeo.empty()) {
    Model geo = load_model(a.brdfgeo), light = load_model(a.lightnet);
    auto preds = predict_scenes({s}, &geo, &light);
    in.depth = preds[0].brdfgeo->depth;
    in.normal = preds[0].brdfgeo->normal;
    in.lighting = *preds[0].lighting;
  }
  InsertionResult r = insert_sphere(in, spec);
  write_png_preview(a.out, r.image, a.exposure);
  if (!a.out_pfm.empty()) write_pfm(a.out_pfm, r.image);
  double n = 0.0;
  for (double v : r.sphere_mask.data()) n += v;
  out << "inserted sphere covering " << n << " pixels\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"sgir: single-image inverse rendering toolkit"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate synthetic scenes");
  gen->add_option("--config", ga.config, "Generator config JSON");
  gen->add_option("--seed", ga.seed, "Base seed");
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--count", ga.count, "Number of scenes");

  RenderArgs ra;
  auto* ren = app.add_subcommand("render", "Render a scene from its ground-truth buffers");
  ren->add_option("--manifest", ra.manifest, "Scene manifest")->required();
  ren->add_option("--out", ra.out, "Output PFM");
  ren->add_option("--preview", ra.preview, "Tonemapped PNG preview");
  ren->add_option("--exposure", ra.exposure, "Preview exposure");
  ren->add_flag("--zero-lighting", ra.zero_lighting, "Render with all lighting set to zero");

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config, "Train config JSON")->required();
  auto* tseed = tr->add_option("--seed", train_seed, "Override the config seed");
  tr->add_option("--out", ta.out, "Override the output directory");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on scenes");
  ev->add_option("--config", ea.config, "Eval config JSON")->required();
  ev->add_option("--out", ea.out, "Override the output directory");

  AttnArgs aa;
  auto* at = app.add_subcommand("attn", "Render an attention heatmap");
  at->add_option("--checkpoint", aa.checkpoint, "Model checkpoint")->required();
  at->add_option("--image", aa.image, "Input image (PFM or manifest.json)")->required();
  at->add_option("--layer", aa.layer, "Transformer layer (encoder first)");
  at->add_option("--head", aa.head, "Attention head");
  at->add_option("--patch", aa.patch, "Query patch index");
  at->add_option("--out", aa.out, "Output PNG")->required();
  at->add_option("--raw", aa.raw, "Also write the raw attention row as JSON");

  InsertArgs ia;
  auto* ins = app.add_subcommand("insert", "Insert a virtual sphere");
  ins->add_option("--manifest", ia.manifest, "Scene manifest (image and predictions)")->required();
  ins->add_option("--brdfgeo", ia.brdfgeo, "BRDF/geometry checkpoint");
  ins->add_option("--lightnet", ia.lightnet, "Lighting checkpoint");
  ins->add_option("--row", ia.row, "Contact pixel row")->required();
  ins->add_option("--col", ia.col, "Contact pixel column")->required();
  ins->add_option("--radius", ia.radius, "Sphere radius");
  ins->add_option("--albedo", ia.albedo, "Sphere albedo r g b")->expected(3);
  ins->add_option("--roughness", ia.roughness, "Sphere roughness");
  ins->add_option("--exposure", ia.exposure, "Preview exposure");
  ins->add_option("--out", ia.out, "Output PNG")->required();
  ins->add_option("--out-pfm", ia.out_pfm, "Also write the linear composite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (gen->parsed()) return cmd_generate(ga, out);
    if (ren->parsed()) return cmd_render(ra, out);
    if (tr->parsed()) {
      if (tseed->count()) ta.seed = train_seed;
      return cmd_train(ta, out);
    }
    if (ev->parsed()) return cmd_eval(ea, out);
    if (at->parsed()) return cmd_attn(aa, out);
    if (ins->parsed()) return cmd_insert(ia, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace sgir::cli
