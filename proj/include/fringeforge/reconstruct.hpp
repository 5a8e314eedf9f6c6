// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/core.hpp"
#include "fringeforge/fringe.hpp"
#include "fringeforge/geometry.hpp"

#include <array>
#include <span>
#include <vector>

namespace fringeforge {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::array<int, 2>> source_pixels;  // (u_c, v_c); empty when unknown

  std::size_t size() const { return points.size(); }
  bool has_provenance() const { return source_pixels.size() == points.size(); }
};

struct DepthImage {
  Image depth;
  Mask mask;
};

/// Cloud plus the derivative of every point with respect to the absolute
/// phase of its own source pixel. The Jacobian is diagonal in the pixel index.
struct Reconstruction {
  PointCloud cloud;
  std::vector<Vec3> d_point_d_phase;
  std::vector<std::size_t> pixel_index;  // row-major camera pixel of each point
  int degenerate_pixels = 0;
};

/// One point per valid pixel: real-valued projector column from the phase,
/// then triangulation against the camera ray.
Reconstruction reconstruct_cloud(const PhaseMap& absolute, const Calibration& calibration);

/// Camera-frame z of each point written at its source pixel.
DepthImage cloud_to_depth(const PointCloud& cloud, const ProjectionMatrix& camera, int width, int height);

/// Greedy max-min subset of size k; the seed picks the first point.
std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t k, std::uint64_t seed);
PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t k, std::uint64_t seed);
PointCloud select_points(const PointCloud& cloud, std::span<const std::size_t> indices);

/// Centroid-subtracted cloud scaled to unit max norm.
struct Normalized {
  PointCloud cloud;
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;
  std::size_t farthest = 0;
};

Normalized renormalize(const PointCloud& cloud);
/// FPS to target points first (when the cloud is larger), then normalize.
Normalized renormalize(const PointCloud& cloud, std::size_t target, std::uint64_t seed);

/// dL/dx from dL/dy for y = renormalize(x), including the centroid and scale paths.
std::vector<Vec3> renormalize_backward(const Normalized& n, std::span<const Vec3> grad);

/// Normalization with frozen centroid and scale (no gradient through them).
PointCloud apply_normalization(const PointCloud& cloud, const Vec3& centroid, double scale);

/// theta_* are mean angles (rad), eta_* mean translations in units of the
/// cloud's max radius; each is perturbed by a zero-mean Gaussian.
struct TransformParams {
  double theta_x = 0.0;
  double theta_y = 0.0;
  double theta_z = 0.0;
  double eta_x = 0.0;
  double eta_y = 0.0;
  double sigma_angle = 0.0;
  double sigma_translation = 0.0;
};

TransformParams default_transform_params();  // 5 deg, 0.05

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// R = Rz * Ry * Rx.
Mat3 euler_xyz(double theta_x, double theta_y, double theta_z);
RigidTransform sample_transform(const TransformParams& params, double cloud_radius, std::uint64_t seed);
PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);
PointCloud random_transform(const PointCloud& cloud, const TransformParams& params, std::uint64_t seed);

double cloud_radius(const PointCloud& cloud);

/// Clamp to [max(0, o - 1/n_s), min(1, o + 1/n_s)] in normalized phase
/// units phi / (2 pi n_s), then map back.
PhaseMap clip_phase(const PhaseMap& adversarial, const PhaseMap& original);

}  // namespace fringeforge
