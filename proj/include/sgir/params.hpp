// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "sgir/tensor.hpp"

namespace sgir {

// Named parameter tensors, ordered lexicographically by name.
using ParamSet = std::map<std::string, Tensor>;

// Attaches every parameter to `tape` as a leaf.
inline ParamSet bind_params(const ParamSet& params, Tape& tape) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, tape.leaf(t));
  return out;
}

inline std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

// Rounds every value to the nearest float; parameters are stored in single
// precision so checkpoints reproduce them exactly.
inline void round_to_storage(ParamSet& params) {
  for (auto& [_, t] : params)
    for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

// One bias-corrected Adam update, no weight decay. `grads` must hold a
// same-shaped entry for every parameter.
inline void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& st) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ValidationError("adam_step: no gradient for parameter '" + name + "'");
    if (it->second.shape() != p.shape())
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", parameter has " + shape_str(p.shape()));
    auto m = st.m.find(name);
    if (m != st.m.end() && m->second.size() != p.size())
      throw ShapeError("adam_step: moment buffer for '" + name + "' does not match the parameter");
  }
  ++st.step;
  double t = static_cast<double>(st.step);
  double c1 = 1.0 - std::pow(st.beta1, t), c2 = 1.0 - std::pow(st.beta2, t);
  for (auto& [name, p] : params) {
    auto g = grads.at(name).data();
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    if (v.empty()) v.assign(p.size(), 0.0);
    auto pd = p.mutable_data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      double mh = m[i] / c1, vh = v[i] / c2;
      pd[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
}

// Gathers per-parameter gradients from a backward pass over bound params.
inline std::map<std::string, Tensor> gather_grads(const ParamSet& bound, const Gradients& g) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : bound) out.emplace(name, g[t]);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: per entry u32 name length, UTF-8 name, u32 rank,
// u32 extents, float32 payload. All little-endian, entries in name order.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw IoError("checkpoint: truncated at byte " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace detail

inline std::string encode_checkpoint(const std::map<std::string, Tensor>& entries) {
  std::string out;
  for (const auto& [name, t] : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::string& bytes) {
  std::map<std::string, Tensor> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto len = detail::get_u32(bytes, pos);
    if (pos + len > bytes.size()) throw IoError("checkpoint: truncated entry name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    auto rank = detail::get_u32(bytes, pos);
    Shape s(rank);
    for (auto& e : s) e = detail::get_u32(bytes, pos);
    std::vector<double> data(shape_size(s));
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(detail::get_u32(bytes, pos)));
    if (!out.emplace(name, Tensor(s, std::move(data))).second)
      throw IoError("checkpoint: duplicate entry '" + name + "'");
  }
  return out;
}

inline void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  auto bytes = encode_checkpoint(entries);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string param_digest(const ParamSet& params) { return fnv1a_hex(encode_checkpoint(params)); }

}  // namespace sgir
