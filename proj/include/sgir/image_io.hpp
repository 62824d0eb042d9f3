// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "sgir/tensor.hpp"

namespace sgir {

// ---------------------------------------------------------------------------
// PFM. Header "PF" (3 channels) or "Pf" (1 channel), then "width height",
// then the scale; a negative scale means little-endian payload. Rows are
// stored bottom-to-top. Values are stored as float32, so the round trip is
// exact for float-representable tensors.

inline std::string encode_pfm(const Tensor& t) {
  bool color = t.rank() == 3 && t.dim(2) == 3;
  if (!(t.rank() == 2 || color)) throw ShapeError("write_pfm: expected h x w or h x w x 3, got " + shape_str(t.shape()));
  for (double v : t.data())
    if (!std::isfinite(v)) throw DomainError("write_pfm: non-finite value");
  std::size_t h = t.dim(0), w = t.dim(1), c = color ? 3 : 1;
  std::ostringstream os;
  os << (color ? "PF" : "Pf") << '\n' << w << ' ' << h << '\n' << "-1.0" << '\n';
  std::string out = os.str();
  out.reserve(out.size() + h * w * c * 4);
  auto d = t.data();
  for (std::size_t row = h; row-- > 0;)
    for (std::size_t i = 0; i < w * c; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d[row * w * c + i]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  return out;
}

inline Tensor decode_pfm(const std::string& bytes, const std::string& what = "pfm") {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ValidationError(what + ": truncated header");
    return bytes.substr(start, pos - start);
  };
  std::string magic = token();
  if (magic != "PF" && magic != "Pf") throw ValidationError(what + ": bad magic '" + magic + "'");
  std::size_t c = magic == "PF" ? 3 : 1;
  long w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw ValidationError(what + ": malformed header");
  }
  if (w <= 0 || h <= 0) throw ValidationError(what + ": invalid dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw ValidationError(what + ": invalid scale");
  if (scale > 0.0) throw ValidationError(what + ": big-endian payload (positive scale) is not supported");
  if (pos >= bytes.size()) throw ValidationError(what + ": truncated payload");
  ++pos;  // single whitespace terminates the header
  auto W = static_cast<std::size_t>(w), H = static_cast<std::size_t>(h);
  std::size_t need = W * H * c * 4;
  if (bytes.size() - pos < need)
    throw ValidationError(what + ": truncated payload, need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - pos));
  std::vector<double> data(W * H * c);
  for (std::size_t row = H; row-- > 0;)
    for (std::size_t i = 0; i < W * c; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * b);
      data[row * W * c + i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  return c == 3 ? Tensor({H, W, 3}, std::move(data)) : Tensor({H, W}, std::move(data));
}

inline void write_pfm(const std::string& path, const Tensor& t) {
  auto bytes = encode_pfm(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Tensor read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pfm(ss.str(), path);
}

// ---------------------------------------------------------------------------
// 8-bit PNG previews.

struct Image8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first
};

inline std::uint8_t tonemap_8bit(double v, double exposure) {
  double x = std::clamp(exposure * v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * std::pow(x, 1.0 / 2.2)));
}

inline Image8 tonemap(const Tensor& t, double exposure) {
  bool color = t.rank() == 3 && t.dim(2) == 3;
  if (!(t.rank() == 2 || color)) throw ShapeError("tonemap: expected h x w or h x w x 3, got " + shape_str(t.shape()));
  Image8 img{t.dim(1), t.dim(0), color ? 3u : 1u, {}};
  img.pixels.resize(t.size());
  auto d = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) img.pixels[i] = tonemap_8bit(d[i], exposure);
  return img;
}

inline void write_png(const std::string& path, const Image8& img) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.pixels[y * img.width * img.channels]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image8 read_png(const std::string& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: only 8-bit images are supported");
  }
  Image8 img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, &img.pixels[y * img.width * img.channels], nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png_preview(const std::string& path, const Tensor& t, double exposure) {
  write_png(path, tonemap(t, exposure));
}

}  // namespace sgir
