// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "sgir/tensor.hpp"
#include "sgir/vec3.hpp"

namespace sgir {

// Pinhole camera at the origin looking down +z. Image rows run top to
// bottom, y points up, x points right.
struct CameraModel {
  std::size_t width = 0;
  std::size_t height = 0;
  double vertical_fov = std::numbers::pi / 3.0;

  bool operator==(const CameraModel&) const = default;

  void validate() const {
    if (width == 0 || height == 0) throw ValidationError("camera: width and height must be positive");
    if (!(vertical_fov > 0.0 && vertical_fov < std::numbers::pi))
      throw ValidationError("camera: vertical_fov must lie in (0, pi), got " + std::to_string(vertical_fov));
  }

  // Ray through the center of pixel (row, col), scaled so that z = 1.
  Vec3 ray(double row, double col) const {
    double half = std::tan(vertical_fov / 2.0);
    double hh = static_cast<double>(height) / 2.0;
    double x = (col + 0.5 - static_cast<double>(width) / 2.0) / hh * half;
    double y = (hh - (row + 0.5)) / hh * half;
    return {x, y, 1.0};
  }

  // Inverse of ray(): continuous (row, col) of a camera-space point.
  std::array<double, 2> project(const Vec3& p) const {
    double half = std::tan(vertical_fov / 2.0);
    double hh = static_cast<double>(height) / 2.0;
    double x = p[0] / p[2], y = p[1] / p[2];
    return {hh - y / half * hh - 0.5, x / half * hh + static_cast<double>(width) / 2.0 - 0.5};
  }

  // Camera-space point at z-depth `depth` on the pixel's ray.
  Vec3 unproject(std::size_t row, std::size_t col, double depth) const {
    return depth * ray(static_cast<double>(row), static_cast<double>(col));
  }
};

// Unit view ray per pixel, h x w x 3.
inline Tensor pixel_view_dirs(const CameraModel& cam) {
  cam.validate();
  std::vector<double> d(cam.height * cam.width * 3);
  for (std::size_t r = 0; r < cam.height; ++r)
    for (std::size_t c = 0; c < cam.width; ++c) {
      Vec3 v = normalize(cam.ray(static_cast<double>(r), static_cast<double>(c)));
      for (int k = 0; k < 3; ++k) d[(r * cam.width + c) * 3 + static_cast<std::size_t>(k)] = v[static_cast<std::size_t>(k)];
    }
  return Tensor({cam.height, cam.width, 3}, std::move(d));
}

}  // namespace sgir
