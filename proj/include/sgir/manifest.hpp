// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "sgir/image_io.hpp"
#include "sgir/params.hpp"
#include "sgir/scene.hpp"

namespace sgir {

inline constexpr int kManifestVersion = 1;

// Manifest fields, with buffer file names relative to the manifest's
// directory.
struct SceneManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  CameraModel camera;
  std::string config_digest;
  std::map<std::string, std::string> files;  // image, depth, normal, albedo, roughness, mask_o, mask_l, lighting

  bool operator==(const SceneManifest&) const = default;
};

inline const std::vector<std::string>& manifest_file_keys() {
  static const std::vector<std::string> keys = {"image",     "depth",  "normal", "albedo",
                                                "roughness", "mask_o", "mask_l", "lighting"};
  return keys;
}

inline nlohmann::json to_json(const SceneManifest& m) {
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [k, v] : m.files) files[k] = v;
  return {{"version", m.version},
          {"seed", m.seed},
          {"camera", {{"w", m.camera.width}, {"h", m.camera.height}, {"vfov", m.camera.vertical_fov}}},
          {"files", files},
          {"config_digest", m.config_digest}};
}

inline SceneManifest manifest_from_json(const nlohmann::json& j) {
  SceneManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("camera");
    m.camera = {c.at("w").get<std::size_t>(), c.at("h").get<std::size_t>(), c.at("vfov").get<double>()};
    for (const auto& key : manifest_file_keys()) m.files[key] = j.at("files").at(key).get<std::string>();
    m.config_digest = j.value("config_digest", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  if (m.version != kManifestVersion) throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
  m.camera.validate();
  return m;
}

// Writes every buffer next to manifest.json in `dir` and returns the
// manifest path.
inline std::string save_scene(const std::string& dir, const Scene& s) {
  namespace fs = std::filesystem;
  validate_buffers(s.buffers);
  fs::create_directories(dir);
  SceneManifest m;
  m.seed = s.seed;
  m.camera = s.buffers.camera;
  m.config_digest = s.config_digest;
  m.files = {{"image", "image.pfm"},         {"depth", "depth.pfm"},   {"normal", "normal.pfm"},
             {"albedo", "albedo.pfm"},       {"roughness", "roughness.pfm"}, {"mask_o", "mask_o.pfm"},
             {"mask_l", "mask_l.pfm"},       {"lighting", "lighting.ckpt"}};
  fs::path d(dir);
  const auto& b = s.buffers;
  write_pfm((d / "image.pfm").string(), b.image);
  write_pfm((d / "depth.pfm").string(), b.depth);
  write_pfm((d / "normal.pfm").string(), b.normal);
  write_pfm((d / "albedo.pfm").string(), b.albedo);
  write_pfm((d / "roughness.pfm").string(), b.roughness);
  write_pfm((d / "mask_o.pfm").string(), b.mask_o);
  write_pfm((d / "mask_l.pfm").string(), b.mask_l);
  write_checkpoint((d / "lighting.ckpt").string(), s.lighting.entries());
  auto path = (d / "manifest.json").string();
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << to_json(m).dump(2) << '\n';
  return path;
}

inline SceneManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("manifest '" + path + "' not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest '" + path + "': " + e.what());
  }
  return manifest_from_json(j);
}

// Loads a manifest and all its buffers, checking every shape against the
// camera.
inline Scene load_scene(const std::string& manifest_path, SceneManifest* manifest_out = nullptr) {
  namespace fs = std::filesystem;
  SceneManifest m = read_manifest(manifest_path);
  fs::path dir = fs::path(manifest_path).parent_path();
  std::size_t h = m.camera.height, w = m.camera.width;
  auto path_of = [&](const std::string& key) {
    fs::path p = dir / m.files.at(key);
    if (!fs::exists(p)) throw ValidationError("manifest references missing file '" + m.files.at(key) + "' (" + key + ")");
    return p.string();
  };
  auto load = [&](const std::string& key, Shape expect) {
    Tensor t = read_pfm(path_of(key));
    if (t.shape() != expect)
      throw ShapeError("buffer '" + key + "' has shape " + shape_str(t.shape()) + ", manifest declares " +
                       shape_str(expect));
    return t;
  };
  Scene s;
  s.seed = m.seed;
  s.config_digest = m.config_digest;
  auto& b = s.buffers;
  b.camera = m.camera;
  b.image = load("image", {h, w, 3});
  b.depth = load("depth", {h, w});
  b.normal = load("normal", {h, w, 3});
  b.albedo = load("albedo", {h, w, 3});
  b.roughness = load("roughness", {h, w});
  b.mask_o = load("mask_o", {h, w});
  b.mask_l = load("mask_l", {h, w});
  auto light = read_checkpoint(path_of("lighting"));
  for (const char* key : {"sg.xi", "sg.lam", "sg.f"})
    if (!light.count(key)) throw ValidationError(std::string("lighting file lacks entry '") + key + "'");
  s.lighting = {light.at("sg.xi"), light.at("sg.lam"), light.at("sg.f")};
  std::size_t K = s.lighting.lam.shape().empty() ? 0 : s.lighting.lam.shape().back();
  if (s.lighting.lam.shape() != Shape{h, w, K} || s.lighting.xi.shape() != Shape{h, w, K, 3} ||
      s.lighting.f.shape() != Shape{h, w, K, 3})
    throw ShapeError("buffer 'lighting' does not match the manifest's " + std::to_string(h) + "x" + std::to_string(w) +
                     " camera");
  validate_buffers(b);
  if (manifest_out) *manifest_out = m;
  return s;
}

}  // namespace sgir
