// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fringeforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

enum class ErrorCode {
  InvalidConfig,
  NonOrthonormalRotation,
  BehindCamera,
  DegenerateGeometry,
  ShapeMismatch,
  FitDiverged,
  InvalidK,
  DegenerateCloud,
  TrainingDiverged,
  NoOverlap,
  AllStepsFailed,
  NonFiniteGradient,
  Io,
  Parse,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Row-major 2D grid; pixel (u, v) is column u, row v.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  T& at(int u, int v) { return data[index(u, v)]; }
  const T& at(int u, int v) const { return data[index(u, v)]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  bool same_shape(int w, int h) const { return width == w && height == h; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const { return width == o.width && height == o.height; }
};

using Image = Grid<double>;
using Mask = Grid<std::uint8_t>;

// splitmix64 step; used to derive independent seeds from (seed, index) pairs.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

using Rng = std::mt19937_64;

// Stable 64-bit FNV-1a, used for content addressing.
std::uint64_t fnv1a(const std::string& s);

}  // namespace fringeforge
