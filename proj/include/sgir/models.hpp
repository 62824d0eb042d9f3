// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgir/dpt.hpp"
#include "sgir/losses.hpp"

namespace sgir {

struct Model {
  DPTConfig cfg;
  ParamSet params;
};

inline const std::vector<HeadKind>& brdfgeo_kinds() {
  static const std::vector<HeadKind> k = {HeadKind::albedo, HeadKind::roughness, HeadKind::inv_depth, HeadKind::normal};
  return k;
}

inline const std::vector<HeadKind>& light_kinds() {
  static const std::vector<HeadKind> k = {HeadKind::sg_axis, HeadKind::sg_lambda, HeadKind::sg_intensity};
  return k;
}

namespace detail {

inline std::string layer_prefix(const std::string& pre, const char* stack, std::size_t i) {
  return pre + stack + "." + std::to_string(i) + ".";
}

inline void add_stack(ParamSet& ps, const Initializer& init, const std::string& pre, const char* stack, std::size_t n,
                      const DPTConfig& c) {
  for (std::size_t i = 0; i < n; ++i) add_transformer_layer(ps, init, layer_prefix(pre, stack, i), c);
}

// Adds the decoder stack, fusion block and head of one output branch.
inline void add_branch(ParamSet& ps, const Initializer& init, const std::string& pre, HeadKind kind, const DPTConfig& c) {
  add_stack(ps, init, pre, "dec", c.m_dec, c);
  add_fuse(ps, init, pre + "fuse.", c);
  add_head(ps, init, pre + "head.", kind, c);
}

inline void add_trunk(ParamSet& ps, const Initializer& init, const std::string& pre, const DPTConfig& c) {
  add_embedder(ps, init, pre + "embed.", c);
  add_stack(ps, init, pre, "enc", c.m_enc, c);
}

// Layer of the decoder that feeds the mid tap (1-based), ceil(m_dec / 2).
inline std::size_t mid_tap(const DPTConfig& c) { return (c.m_dec + 1) / 2; }

struct Trunk {
  EmbedOutput embed;
  Tensor encoded;
};

inline Trunk run_trunk(const ParamSet& ps, const std::string& pre, const Tensor& x, const DPTConfig& c) {
  Trunk t{patch_embed(ps, pre + "embed.", x, c), {}};
  t.encoded = t.embed.tokens;
  for (std::size_t i = 0; i < c.m_enc; ++i)
    t.encoded = transformer_layer(ps, layer_prefix(pre, "enc", i), t.encoded, c.n_heads);
  return t;
}

inline Tensor run_branch(const ParamSet& ps, const std::string& pre, const Trunk& t, HeadKind kind, const DPTConfig& c) {
  Tensor x = t.encoded, mid;
  for (std::size_t i = 0; i < c.m_dec; ++i) {
    x = transformer_layer(ps, layer_prefix(pre, "dec", i), x, c.n_heads);
    if (i + 1 == mid_tap(c)) mid = x;
  }
  Tensor feat = reassemble_fuse(ps, pre + "fuse.", mid, x, t.embed.skip1, t.embed.skip2, c);
  return head_forward(ps, pre + "head.", feat, kind, c);
}

inline std::string single_prefix(HeadKind k) { return std::string("brdfgeo.") + head_name(k) + "."; }

}  // namespace detail

// Deterministic initialization from cfg.seed.
inline Model init_model(const DPTConfig& cfg) {
  cfg.validate();
  Model m{cfg, {}};
  Initializer init(cfg.seed);
  auto& ps = m.params;
  switch (cfg.mode) {
    case ModelMode::multi_task:
      detail::add_trunk(ps, init, "brdfgeo.", cfg);
      detail::add_stack(ps, init, "brdfgeo.", "dec", cfg.m_dec, cfg);
      add_fuse(ps, init, "brdfgeo.fuse.", cfg);
      for (HeadKind k : brdfgeo_kinds()) add_head(ps, init, std::string("brdfgeo.head.") + head_name(k) + ".", k, cfg);
      break;
    case ModelMode::single_task: {
      std::string pre = detail::single_prefix(cfg.task);
      detail::add_trunk(ps, init, pre, cfg);
      detail::add_branch(ps, init, pre, cfg.task, cfg);
      break;
    }
    case ModelMode::light_direct:
    case ModelMode::light_full:
      detail::add_trunk(ps, init, "lightnet.", cfg);
      for (HeadKind k : light_kinds())
        detail::add_branch(ps, init, std::string("lightnet.") + head_name(k) + ".", k, cfg);
      break;
  }
  round_to_storage(ps);
  return m;
}

// ---------------------------------------------------------------------------
// BRDF/geometry network.

// Batched maps: albedo (B,h,w,3), roughness (B,h,w), depth (B,h,w),
// normal (B,h,w,3). A single-task model fills only its own entry.
struct BrdfGeoOutput {
  std::map<HeadKind, Tensor> maps;

  const Tensor& at(HeadKind k) const {
    auto it = maps.find(k);
    if (it == maps.end()) throw ValidationError(std::string("prediction lacks '") + head_name(k) + "'");
    return it->second;
  }
  // Unbatched maps of batch element b, in the layout the losses expect.
  BrdfGeoMaps element(std::size_t b) const;
};

inline Tensor batch_element(const Tensor& x, std::size_t b) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return ops::reshape(ops::slice(x, 0, b, b + 1), s);
}

inline BrdfGeoMaps BrdfGeoOutput::element(std::size_t b) const {
  return {batch_element(at(HeadKind::albedo), b), batch_element(at(HeadKind::roughness), b),
          batch_element(at(HeadKind::inv_depth), b), batch_element(at(HeadKind::normal), b)};
}

// `params` may be the model's own set or a tape-bound copy of it.
inline BrdfGeoOutput brdfgeo_forward(const DPTConfig& c, const ParamSet& params, const Tensor& image) {
  BrdfGeoOutput out;
  if (c.mode == ModelMode::multi_task) {
    auto t = detail::run_trunk(params, "brdfgeo.", image, c);
    Tensor x = t.encoded, mid;
    for (std::size_t i = 0; i < c.m_dec; ++i) {
      x = transformer_layer(params, detail::layer_prefix("brdfgeo.", "dec", i), x, c.n_heads);
      if (i + 1 == detail::mid_tap(c)) mid = x;
    }
    Tensor feat = reassemble_fuse(params, "brdfgeo.fuse.", mid, x, t.embed.skip1, t.embed.skip2, c);
    for (HeadKind k : brdfgeo_kinds())
      out.maps[k] = head_forward(params, std::string("brdfgeo.head.") + head_name(k) + ".", feat, k, c);
  } else if (c.mode == ModelMode::single_task) {
    std::string pre = detail::single_prefix(c.task);
    auto t = detail::run_trunk(params, pre, image, c);
    out.maps[c.task] = detail::run_branch(params, pre, t, c.task, c);
  } else {
    throw ValidationError(std::string("brdfgeo_forward: model mode is ") + mode_name(c.mode));
  }
  return out;
}

inline BrdfGeoOutput brdfgeo_forward(const Model& m, const Tensor& image) {
  return brdfgeo_forward(m.cfg, m.params, image);
}

// Runs four single-task models as one BRDF/geometry predictor.
inline BrdfGeoOutput brdfgeo_forward_single(const std::vector<const Model*>& models, const Tensor& image) {
  BrdfGeoOutput out;
  for (const Model* m : models) {
    if (m->cfg.mode != ModelMode::single_task) throw ValidationError("brdfgeo_forward_single: expected single-task models");
    out.maps[m->cfg.task] = brdfgeo_forward(*m, image).at(m->cfg.task);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lighting network.

// Per-pixel lobes: xi (B,h,w,K,3), lam (B,h,w,K), f (B,h,w,K,3).
struct LightOutput {
  Tensor xi, lam, f;
  Tensor packed() const { return pack_sg(xi, lam, f); }
};

// Image (B,h,w,3) with albedo, normal, roughness and inverse depth appended:
// (B,h,w,11).
inline Tensor lightnet_input(const Tensor& image_in, const BrdfGeoOutput& pred) {
  using namespace ops;
  Tensor image = as_batch(image_in);
  std::size_t B = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor r = reshape(pred.at(HeadKind::roughness), {B, H, W, 1});
  Tensor inv = reshape(power(pred.at(HeadKind::inv_depth), -1.0), {B, H, W, 1});
  return concat({image, pred.at(HeadKind::albedo), pred.at(HeadKind::normal), r, inv}, 3);
}

inline LightOutput lightnet_forward(const DPTConfig& c, const ParamSet& params, const Tensor& input) {
  if (!c.is_light()) throw ValidationError(std::string("lightnet_forward: model mode is ") + mode_name(c.mode));
  Tensor x = as_batch(input);
  if (x.rank() != 4 || x.dim(3) != c.in_channels())
    throw ShapeError(std::string("lightnet_forward: ") + mode_name(c.mode) + " expects " +
                     std::to_string(c.in_channels()) + " input channels, got " + shape_str(input.shape()));
  auto t = detail::run_trunk(params, "lightnet.", x, c);
  LightOutput out;
  out.xi = detail::run_branch(params, "lightnet.sg_axis.", t, HeadKind::sg_axis, c);
  out.lam = detail::run_branch(params, "lightnet.sg_lambda.", t, HeadKind::sg_lambda, c);
  out.f = detail::run_branch(params, "lightnet.sg_intensity.", t, HeadKind::sg_intensity, c);
  return out;
}

inline LightOutput lightnet_forward(const Model& m, const Tensor& input) {
  return lightnet_forward(m.cfg, m.params, input);
}

// ---------------------------------------------------------------------------
// Attention maps.

// Layers are counted through the encoder and then the (first) decoder
// stack. Returns the (N_p, N_p) patch-to-patch attention of batch element 0
// with the readout token removed and rows renormalized.
inline Tensor attention_extract(const Model& m, const Tensor& image, std::size_t layer, std::size_t head) {
  const DPTConfig& c = m.cfg;
  if (layer >= c.m_enc + c.m_dec)
    throw ValidationError("attention layer " + std::to_string(layer) + " out of range [0, " +
                          std::to_string(c.m_enc + c.m_dec) + ")");
  if (head >= c.n_heads)
    throw ValidationError("attention head " + std::to_string(head) + " out of range [0, " + std::to_string(c.n_heads) + ")");
  std::string pre, dec_pre;
  switch (c.mode) {
    case ModelMode::multi_task: pre = dec_pre = "brdfgeo."; break;
    case ModelMode::single_task: pre = dec_pre = detail::single_prefix(c.task); break;
    default: pre = "lightnet."; dec_pre = "lightnet.sg_axis."; break;
  }
  Tensor x = patch_embed(m.params, pre + "embed.", image, c).tokens;
  Tensor attn;
  for (std::size_t i = 0; i <= layer; ++i) {
    std::string lp = i < c.m_enc ? detail::layer_prefix(pre, "enc", i) : detail::layer_prefix(dec_pre, "dec", i - c.m_enc);
    x = transformer_layer(m.params, lp, x, c.n_heads, i == layer ? &attn : nullptr);
  }
  std::size_t T = attn.dim(2), N = T - 1;
  auto a = attn.data();
  std::vector<double> out(N * N);
  std::size_t base = head * T * T;
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) s += a[base + (i + 1) * T + (j + 1)];
    for (std::size_t j = 0; j < N; ++j) out[i * N + j] = a[base + (i + 1) * T + (j + 1)] / s;
  }
  return Tensor({N, N}, std::move(out));
}

// ---------------------------------------------------------------------------
// Persistence: checkpoint container plus a config sidecar at <path>.json.

inline std::string sidecar_path(const std::string& ckpt) { return ckpt + ".json"; }

inline void save_model(const std::string& path, const Model& m) {
  write_checkpoint(path, m.params);
  std::ofstream f(sidecar_path(path));
  if (!f) throw IoError("cannot open '" + sidecar_path(path) + "' for writing");
  f << nlohmann::json(m.cfg).dump(2) << '\n';
}

inline DPTConfig read_model_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("model config '" + path + "' not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model config '" + path + "': " + e.what());
  }
  return j.get<DPTConfig>();
}

// Loads a checkpoint and checks every entry against the sidecar config.
inline Model load_model(const std::string& path) {
  Model m = init_model(read_model_config(sidecar_path(path)));
  auto entries = read_checkpoint(path);
  for (auto& [name, t] : m.params) {
    auto it = entries.find(name);
    if (it == entries.end()) throw ValidationError("checkpoint '" + path + "' lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(t.shape()));
    t = it->second;
  }
  if (entries.size() != m.params.size()) throw ValidationError("checkpoint '" + path + "' has unexpected parameters");
  return m;
}

}  // namespace sgir
