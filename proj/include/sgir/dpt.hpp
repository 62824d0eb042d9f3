// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgir/ops.hpp"
#include "sgir/params.hpp"
#include "sgir/sg.hpp"

namespace sgir {

enum class HeadKind { albedo, roughness, normal, inv_depth, sg_axis, sg_lambda, sg_intensity };

inline const char* head_name(HeadKind k) {
  switch (k) {
    case HeadKind::albedo: return "albedo";
    case HeadKind::roughness: return "roughness";
    case HeadKind::normal: return "normal";
    case HeadKind::inv_depth: return "inv_depth";
    case HeadKind::sg_axis: return "sg_axis";
    case HeadKind::sg_lambda: return "sg_lambda";
    case HeadKind::sg_intensity: return "sg_intensity";
  }
  throw ValidationError("unknown head kind");
}

inline HeadKind parse_head_kind(const std::string& s) {
  for (HeadKind k : {HeadKind::albedo, HeadKind::roughness, HeadKind::normal, HeadKind::inv_depth,
                     HeadKind::sg_axis, HeadKind::sg_lambda, HeadKind::sg_intensity})
    if (s == head_name(k)) return k;
  throw ValidationError("unknown head kind '" + s + "'");
}

enum class ModelMode { multi_task, single_task, light_direct, light_full };

inline const char* mode_name(ModelMode m) {
  switch (m) {
    case ModelMode::multi_task: return "multi_task";
    case ModelMode::single_task: return "single_task";
    case ModelMode::light_direct: return "lightnet_direct";
    case ModelMode::light_full: return "lightnet_full";
  }
  throw ValidationError("unknown model mode");
}

inline ModelMode parse_mode(const std::string& s) {
  for (ModelMode m : {ModelMode::multi_task, ModelMode::single_task, ModelMode::light_direct, ModelMode::light_full})
    if (s == mode_name(m)) return m;
  throw ValidationError("unknown model mode '" + s + "'");
}

inline constexpr std::size_t kBrdfGeoChannels = 3;
inline constexpr std::size_t kLightFullChannels = 11;

struct DPTConfig {
  ModelMode mode = ModelMode::multi_task;
  HeadKind task = HeadKind::albedo;  // single_task only
  std::size_t h = 64, w = 80, p = 16;
  std::size_t d_model = 64, n_heads = 4;
  std::size_t m_enc = 2, m_dec = 2;
  bool head_bn = true;
  std::size_t d_fuse = 64, head_width = 16;
  std::size_t embed1 = 16, embed2 = 32;
  std::size_t mlp_ratio = 4;
  std::size_t num_lobes = kNumLobes;
  double lam_max = 50.0, f_max = 10.0;
  std::uint64_t seed = 0;

  bool is_light() const { return mode == ModelMode::light_direct || mode == ModelMode::light_full; }
  std::size_t in_channels() const { return mode == ModelMode::light_full ? kLightFullChannels : kBrdfGeoChannels; }
  std::size_t grid_h() const { return h / p; }
  std::size_t grid_w() const { return w / p; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }

  void validate() const {
    if (p < 4 || (p & (p - 1)) != 0) throw ValidationError("patch size must be a power of two >= 4, got " + std::to_string(p));
    if (h == 0 || w == 0 || h % p != 0 || w % p != 0)
      throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch size " +
                       std::to_string(p));
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                            std::to_string(n_heads));
    if (m_enc == 0 || m_dec == 0) throw ValidationError("m_enc and m_dec must be positive");
    if (d_fuse == 0 || head_width < 2 || embed1 == 0 || embed2 == 0 || mlp_ratio == 0 || num_lobes == 0)
      throw ValidationError("layer widths must be positive");
    if (!(lam_max > 0.0) || !(f_max > 0.0)) throw ValidationError("lam_max and f_max must be positive");
    if (mode == ModelMode::single_task && (task == HeadKind::sg_axis || task == HeadKind::sg_lambda ||
                                           task == HeadKind::sg_intensity))
      throw ValidationError("single_task mode needs a BRDF/geometry task");
  }
};

inline void to_json(nlohmann::json& j, const DPTConfig& c) {
  j = {{"mode", mode_name(c.mode)}, {"task", head_name(c.task)}, {"h", c.h},
       {"w", c.w},                  {"p", c.p},                    {"d_model", c.d_model},
       {"n_heads", c.n_heads},      {"m_enc", c.m_enc},            {"m_dec", c.m_dec},
       {"head_bn", c.head_bn},      {"d_fuse", c.d_fuse},          {"head_width", c.head_width},
       {"embed1", c.embed1},        {"embed2", c.embed2},          {"mlp_ratio", c.mlp_ratio},
       {"num_lobes", c.num_lobes},  {"lam_max", c.lam_max},        {"f_max", c.f_max},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DPTConfig& c) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  static const std::vector<std::string> known = {"mode", "task", "h", "w", "p", "d_model", "n_heads", "m_enc",
                                                 "m_dec", "head_bn", "d_fuse", "head_width", "embed1", "embed2",
                                                 "mlp_ratio", "num_lobes", "lam_max", "f_max", "seed", "readout_mode"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("model config: unknown key '" + k + "'");
  try {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("task")) c.task = parse_head_kind(j.at("task").get<std::string>());
    if (j.contains("readout_mode") && j.at("readout_mode").get<std::string>() != "ignore")
      throw ValidationError("model config: readout_mode must be \"ignore\"");
    auto get = [&](const char* k, auto& v) {
      if (j.contains(k)) v = j.at(k).get<std::remove_reference_t<decltype(v)>>();
    };
    get("h", c.h);
    get("w", c.w);
    get("p", c.p);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("m_enc", c.m_enc);
    get("m_dec", c.m_dec);
    get("head_bn", c.head_bn);
    get("d_fuse", c.d_fuse);
    get("head_width", c.head_width);
    get("embed1", c.embed1);
    get("embed2", c.embed2);
    get("mlp_ratio", c.mlp_ratio);
    get("num_lobes", c.num_lobes);
    get("lam_max", c.lam_max);
    get("f_max", c.f_max);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Initialization.

inline constexpr double kInitStd = 0.02;

// Per-parameter generator seeded from the model seed and the parameter name,
// so initial values do not depend on construction order.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  Tensor trunc_normal(const std::string& name, Shape shape, double std = kInitStd) const {
    std::mt19937_64 rng(seed_ ^ name_hash(name));
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) {
      double z;
      do z = nd(rng);
      while (std::abs(z) > 2.0);
      v = static_cast<double>(static_cast<float>(std * z));
    }
    return t;
  }

 private:
  static std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Layers. Parameters live in a flat ParamSet under dotted prefixes.

namespace nn {

inline const Tensor& param(const ParamSet& ps, const std::string& name) {
  auto it = ps.find(name);
  if (it == ps.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second;
}

inline void add_conv(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t k, std::size_t ci,
                     std::size_t co) {
  ps[name + ".w"] = init.trunc_normal(name + ".w", {k, k, ci, co});
  ps[name + ".b"] = Tensor::zeros({co});
}

inline Tensor conv(const ParamSet& ps, const std::string& name, const Tensor& x, std::size_t stride, std::size_t pad) {
  return ops::add(ops::conv2d(x, param(ps, name + ".w"), stride, pad), param(ps, name + ".b"));
}

inline void add_linear(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out) {
  ps[name + ".w"] = init.trunc_normal(name + ".w", {in, out});
  ps[name + ".b"] = Tensor::zeros({out});
}

inline Tensor linear(const ParamSet& ps, const std::string& name, const Tensor& x) {
  return ops::add(ops::matmul(x, param(ps, name + ".w")), param(ps, name + ".b"));
}

inline void add_norm(ParamSet& ps, const std::string& name, std::size_t c) {
  ps[name + ".g"] = Tensor::ones({c});
  ps[name + ".b"] = Tensor::zeros({c});
}

// Layer norm over the last axis with a learned gain and bias.
inline Tensor norm(const ParamSet& ps, const std::string& name, const Tensor& x) {
  return ops::add(ops::mul(ops::layer_norm(x), param(ps, name + ".g")), param(ps, name + ".b"));
}

// Batch norm over (B,H,W) per channel, always from current-batch statistics.
inline Tensor batch_norm(const ParamSet& ps, const std::string& name, const Tensor& x) {
  const Shape& s = x.shape();
  std::size_t C = s.back(), N = x.size() / C;
  Tensor t = ops::transpose(ops::reshape(x, {N, C}), {1, 0});
  Tensor y = ops::reshape(ops::transpose(ops::layer_norm(t), {1, 0}), s);
  return ops::add(ops::mul(y, param(ps, name + ".g")), param(ps, name + ".b"));
}

inline Tensor relu(const Tensor& x) { return ops::max_with_zero(x); }

}  // namespace nn

// ---------------------------------------------------------------------------
// Patch embedding: two 3x3 stride-2 convolutions (skip stages at h/2 and
// h/4) and a (p/4)x(p/4) stride-p/4 convolution to tokens, then one
// discarded readout token prepended and positional embeddings added.

struct EmbedOutput {
  Tensor tokens;  // (B, 1 + N_p, d_model), readout first
  Tensor skip1;   // (B, h/2, w/2, embed1)
  Tensor skip2;   // (B, h/4, w/4, embed2)
};

inline void add_embedder(ParamSet& ps, const Initializer& init, const std::string& pre, const DPTConfig& c) {
  nn::add_conv(ps, init, pre + "conv1", 3, c.in_channels(), c.embed1);
  nn::add_conv(ps, init, pre + "conv2", 3, c.embed1, c.embed2);
  nn::add_conv(ps, init, pre + "patch", c.p / 4, c.embed2, c.d_model);
  ps[pre + "pos"] = Tensor::zeros({c.num_patches(), c.d_model});
  ps[pre + "readout"] = init.trunc_normal(pre + "readout", {1, 1, c.d_model});
}

inline Tensor as_batch(const Tensor& x) {
  return x.rank() == 3 ? ops::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
}

inline EmbedOutput patch_embed(const ParamSet& ps, const std::string& pre, const Tensor& image_in, const DPTConfig& c) {
  Tensor x = as_batch(image_in);
  if (x.rank() != 4 || x.dim(1) != c.h || x.dim(2) != c.w || x.dim(3) != c.in_channels())
    throw ShapeError("patch_embed: input " + shape_str(image_in.shape()) + " does not match configured " +
                     std::to_string(c.h) + "x" + std::to_string(c.w) + "x" + std::to_string(c.in_channels()));
  std::size_t B = x.dim(0);
  EmbedOutput out;
  out.skip1 = nn::relu(nn::conv(ps, pre + "conv1", x, 2, 1));
  out.skip2 = nn::relu(nn::conv(ps, pre + "conv2", out.skip1, 2, 1));
  Tensor t = nn::conv(ps, pre + "patch", out.skip2, c.p / 4, 0);
  t = ops::add(ops::reshape(t, {B, c.num_patches(), c.d_model}), nn::param(ps, pre + "pos"));
  Tensor readout = ops::add(Tensor::zeros({B, 1, c.d_model}), nn::param(ps, pre + "readout"));
  out.tokens = ops::concat({readout, t}, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Transformer layer: x + MHSA(LN(x)), then + MLP(LN(.)) with gelu.

inline void add_transformer_layer(ParamSet& ps, const Initializer& init, const std::string& pre, const DPTConfig& c) {
  nn::add_norm(ps, pre + "ln1", c.d_model);
  nn::add_linear(ps, init, pre + "qkv", c.d_model, 3 * c.d_model);
  nn::add_linear(ps, init, pre + "proj", c.d_model, c.d_model);
  nn::add_norm(ps, pre + "ln2", c.d_model);
  nn::add_linear(ps, init, pre + "fc1", c.d_model, c.mlp_ratio * c.d_model);
  nn::add_linear(ps, init, pre + "fc2", c.mlp_ratio * c.d_model, c.d_model);
}

// Post-softmax attention probabilities (B, heads, T, T) are written to
// `attn_out` when it is non-null.
inline Tensor transformer_layer(const ParamSet& ps, const std::string& pre, const Tensor& x, std::size_t n_heads,
                                Tensor* attn_out = nullptr) {
  using namespace ops;
  if (x.rank() != 3) throw ShapeError("transformer_layer: expected (B,T,d), got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  if (nn::param(ps, pre + "qkv.w").dim(0) != d)
    throw ShapeError("transformer_layer: token width " + std::to_string(d) + " does not match the layer");
  if (n_heads == 0 || d % n_heads != 0) throw ValidationError("transformer_layer: bad head count");
  std::size_t dh = d / n_heads;
  Tensor qkv = nn::linear(ps, pre + "qkv", nn::norm(ps, pre + "ln1", x));
  qkv = transpose(reshape(qkv, {B, T, 3, n_heads, dh}), {2, 0, 3, 1, 4});  // (3,B,H,T,dh)
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {B, n_heads, T, dh}); };
  Tensor q = part(0), k = part(1), v = part(2);
  Tensor scores = scale(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax_lastdim(scores);
  if (attn_out) *attn_out = attn.detach();
  Tensor ctx = reshape(transpose(matmul(attn, v), {0, 2, 1, 3}), {B, T, d});
  Tensor y = add(x, nn::linear(ps, pre + "proj", ctx));
  Tensor hdn = gelu(nn::linear(ps, pre + "fc1", nn::norm(ps, pre + "ln2", y)));
  return add(y, nn::linear(ps, pre + "fc2", hdn));
}

// ---------------------------------------------------------------------------
// Reassemble and fuse: the two decoder taps become (h/p, w/p) maps, are
// projected and summed, upsampled to h/4 and h/2, and merged with the
// projected embedder skips.

inline void add_fuse(ParamSet& ps, const Initializer& init, const std::string& pre, const DPTConfig& c) {
  nn::add_conv(ps, init, pre + "tap_mid", 1, c.d_model, c.d_fuse);
  nn::add_conv(ps, init, pre + "tap_deep", 1, c.d_model, c.d_fuse);
  nn::add_conv(ps, init, pre + "skip2", 1, c.embed2, c.d_fuse);
  nn::add_conv(ps, init, pre + "refine2", 3, c.d_fuse, c.d_fuse);
  nn::add_conv(ps, init, pre + "skip1", 1, c.embed1, c.d_fuse);
  nn::add_conv(ps, init, pre + "refine1", 3, c.d_fuse, c.d_fuse);
}

inline Tensor tokens_to_map(const Tensor& tokens, const DPTConfig& c) {
  std::size_t B = tokens.dim(0);
  if (tokens.rank() != 3 || tokens.dim(1) != c.num_patches() + 1 || tokens.dim(2) != c.d_model)
    throw ShapeError("reassemble: token stage " + shape_str(tokens.shape()) + " does not match the configuration");
  Tensor body = ops::slice(tokens, 1, 1, c.num_patches() + 1);
  return ops::reshape(body, {B, c.grid_h(), c.grid_w(), c.d_model});
}

inline Tensor reassemble_fuse(const ParamSet& ps, const std::string& pre, const Tensor& tap_mid,
                              const Tensor& tap_deep, const Tensor& skip1, const Tensor& skip2, const DPTConfig& c) {
  using namespace ops;
  std::size_t B = tap_mid.dim(0);
  if (tap_deep.shape() != tap_mid.shape() || skip1.shape() != Shape{B, c.h / 2, c.w / 2, c.embed1} ||
      skip2.shape() != Shape{B, c.h / 4, c.w / 4, c.embed2})
    throw ShapeError("reassemble_fuse: inconsistent stage shapes");
  Tensor x = add(nn::conv(ps, pre + "tap_mid", tokens_to_map(tap_mid, c), 1, 0),
                 nn::conv(ps, pre + "tap_deep", tokens_to_map(tap_deep, c), 1, 0));
  for (std::size_t s = c.grid_h(); s < c.h / 4; s *= 2) x = bilinear_upsample_2x(x);
  x = add(x, nn::conv(ps, pre + "skip2", skip2, 1, 0));
  x = nn::relu(nn::conv(ps, pre + "refine2", x, 1, 1));
  x = bilinear_upsample_2x(x);
  x = add(x, nn::conv(ps, pre + "skip1", skip1, 1, 0));
  return nn::relu(nn::conv(ps, pre + "refine1", x, 1, 1));
}

// ---------------------------------------------------------------------------
// Heads: conv(s2) - up - conv - up - conv - conv(1x1), then per-kind
// post-processing.

inline std::size_t head_channels(HeadKind k, std::size_t lobes) {
  switch (k) {
    case HeadKind::albedo:
    case HeadKind::normal: return 3;
    case HeadKind::roughness:
    case HeadKind::inv_depth: return 1;
    case HeadKind::sg_axis:
    case HeadKind::sg_intensity: return 3 * lobes;
    case HeadKind::sg_lambda: return lobes;
  }
  throw ValidationError("unknown head kind");
}

inline constexpr double kMinInvDepth = 1e-2;

inline void add_head(ParamSet& ps, const Initializer& init, const std::string& pre, HeadKind kind, const DPTConfig& c) {
  std::size_t hw = c.head_width;
  nn::add_conv(ps, init, pre + "conv1", 3, c.d_fuse, hw);
  nn::add_conv(ps, init, pre + "conv2", 3, hw, hw);
  nn::add_conv(ps, init, pre + "conv3", 3, hw, hw / 2);
  nn::add_conv(ps, init, pre + "out", 1, hw / 2, head_channels(kind, c.num_lobes));
  if (c.head_bn) {
    nn::add_norm(ps, pre + "bn1", hw);
    nn::add_norm(ps, pre + "bn2", hw);
    nn::add_norm(ps, pre + "bn3", hw / 2);
  }
}

// Unit 3-vectors along the last axis; rows with vanishing norm become
// (0, 0, -1) with zero gradient.
inline Tensor unit_directions(const Tensor& x) {
  using namespace ops;
  Tensor y = normalize_lastdim(x);
  std::size_t rows = x.size() / 3;
  std::vector<double> keep(x.size(), 1.0), fill(x.size(), 0.0);
  bool any = false;
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    if (std::sqrt(d[3 * r] * d[3 * r] + d[3 * r + 1] * d[3 * r + 1] + d[3 * r + 2] * d[3 * r + 2]) <= kNormalizeEps) {
      keep[3 * r] = keep[3 * r + 1] = keep[3 * r + 2] = 0.0;
      fill[3 * r + 2] = -1.0;
      any = true;
    }
  if (!any) return y;
  return add(mul(y, Tensor(x.shape(), std::move(keep))), Tensor(x.shape(), std::move(fill)));
}

// Maps pre-activations (B,h,w,C) to the kind's output range.
inline Tensor head_postprocess(const Tensor& z, HeadKind kind, const DPTConfig& c) {
  using namespace ops;
  std::size_t B = z.dim(0), H = z.dim(1), W = z.dim(2), K = c.num_lobes;
  auto unit = [](const Tensor& t) { return scale(shift(tanh(t), 1.0), 0.5); };
  switch (kind) {
    case HeadKind::albedo: return unit(z);
    case HeadKind::roughness: return reshape(unit(z), {B, H, W});
    case HeadKind::normal: return unit_directions(tanh(z));
    case HeadKind::inv_depth:
      return reshape(power(clamp(unit(z), kMinInvDepth, 1.0), -1.0), {B, H, W});
    case HeadKind::sg_axis: return unit_directions(reshape(tanh(z), {B, H, W, K, 3}));
    case HeadKind::sg_lambda: return scale(unit(z), c.lam_max);
    case HeadKind::sg_intensity: return reshape(scale(unit(z), c.f_max), {B, H, W, K, 3});
  }
  throw ValidationError("unknown head kind");
}

inline Tensor head_forward(const ParamSet& ps, const std::string& pre, const Tensor& feat, HeadKind kind,
                           const DPTConfig& c) {
  if (feat.rank() != 4 || feat.dim(1) != c.h / 2 || feat.dim(2) != c.w / 2 || feat.dim(3) != c.d_fuse)
    throw ShapeError("head_forward: features " + shape_str(feat.shape()) + " do not match the configuration");
  auto block = [&](Tensor x, const std::string& conv, const std::string& bn, std::size_t stride) {
    x = nn::conv(ps, pre + conv, x, stride, 1);
    if (c.head_bn) x = nn::batch_norm(ps, pre + bn, x);
    return nn::relu(x);
  };
  Tensor x = block(feat, "conv1", "bn1", 2);
  x = block(ops::bilinear_upsample_2x(x), "conv2", "bn2", 1);
  x = block(ops::bilinear_upsample_2x(x), "conv3", "bn3", 1);
  return head_postprocess(nn::conv(ps, pre + "out", x, 1, 0), kind, c);
}

}  // namespace sgir
