// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sgir/ops.hpp"
#include "sgir/tensor.hpp"

namespace sgir::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor random_tensor(Rng& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(s));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(s, std::move(v));
}

// Shape of the given rank with extents in [1, max_extent].
inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_extent = 4) {
  Shape s(rank);
  for (auto& e : s) e = uniform_int(rng, 1, max_extent);
  return s;
}

inline Tensor random_mask(Rng& rng, const Shape& s, double p_on = 0.7) {
  std::vector<double> v(shape_size(s));
  for (auto& x : v) x = uniform(rng, 0.0, 1.0) < p_on ? 1.0 : 0.0;
  v[uniform_int(rng, 0, v.size() - 1)] = 1.0;
  return Tensor(s, std::move(v));
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Analytic gradient of a scalar function of several tensors.
inline std::vector<Tensor> analytic_grad(const ScalarFn& f, const std::vector<Tensor>& xs) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const auto& x : xs) leaves.push_back(tape.leaf(x));
  Tensor y = f(leaves);
  Gradients g = backward(tape, y);
  std::vector<Tensor> out;
  for (const auto& l : leaves) out.push_back(g[l]);
  return out;
}

// Central-difference gradient of the same function.
inline std::vector<Tensor> numeric_grad(const ScalarFn& f, const std::vector<Tensor>& xs, double h = 1e-5) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    std::vector<double> g(xs[k].size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto eval = [&](double d) {
        std::vector<Tensor> ys = xs;
        ys[k] = Tensor(xs[k].shape(), xs[k].vec());
        ys[k].mutable_data()[i] += d;
        return f(ys).item();
      };
      g[i] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    out.emplace_back(xs[k].shape(), std::move(g));
  }
  return out;
}

// ||a - n|| / max(||a||, ||n||) over all inputs jointly; 0 when both vanish.
inline double relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      diff += (a[k][i] - n[k][i]) * (a[k][i] - n[k][i]);
      na += a[k][i] * a[k][i];
      nn += n[k][i] * n[k][i];
    }
  double den = std::sqrt(std::max(na, nn));
  if (den < 1e-14) return std::sqrt(diff);
  return std::sqrt(diff) / den;
}

inline double gradient_error(const ScalarFn& f, const std::vector<Tensor>& xs, double h = 1e-5) {
  return relative_error(analytic_grad(f, xs), numeric_grad(f, xs, h));
}

// Relative error restricted to `count` randomly chosen input coordinates,
// for functions too expensive to difference in every coordinate.
inline double sampled_gradient_error(const ScalarFn& f, const std::vector<Tensor>& xs, Rng& rng, std::size_t count,
                                     double h = 1e-5) {
  std::vector<Tensor> a = analytic_grad(f, xs);
  std::size_t total = 0;
  for (const auto& x : xs) total += x.size();
  std::vector<double> va, vn;
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t flat = uniform_int(rng, 0, total - 1), k = 0;
    while (flat >= xs[k].size()) flat -= xs[k++].size();
    auto eval = [&](double d) {
      std::vector<Tensor> ys = xs;
      ys[k] = Tensor(xs[k].shape(), xs[k].vec());
      ys[k].mutable_data()[flat] += d;
      return f(ys).item();
    };
    va.push_back(a[k][flat]);
    vn.push_back((eval(h) - eval(-h)) / (2.0 * h));
  }
  return relative_error({Tensor({count}, va)}, {Tensor({count}, vn)});
}

// Scalarizes a tensor-valued function with fixed random weights.
inline ScalarFn weighted_sum(std::function<Tensor(const std::vector<Tensor>&)> g, const Tensor& weights) {
  return [g = std::move(g), weights](const std::vector<Tensor>& xs) {
    return ops::sum(ops::mul(g(xs), weights));
  };
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh, empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sgir_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace sgir::testing
