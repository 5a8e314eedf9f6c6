// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fringeforge {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

Reconstruction reconstruct_cloud(const PhaseMap& absolute, const Calibration& cal) {
  if (absolute.kind != PhaseKind::Absolute) throw Error(ErrorCode::InvalidConfig, "expected absolute phase");
  if (cal.projector_width < 2) throw Error(ErrorCode::InvalidConfig, "calibration lacks the projector size");
  const int w = cal.projector_width;
  const int n_s = absolute.fringe_count;
  const double column_per_phase = w / (kTwoPi * n_s);

  Reconstruction r;
  r.cloud.points.reserve(absolute.valid_count());
  for (int v = 0; v < absolute.height; ++v) {
    for (int u = 0; u < absolute.width; ++u) {
      const std::size_t i = absolute.index(u, v);
      if (!absolute.mask[i]) continue;
      const ColumnEstimate col = phase_to_column(absolute.values[i], w, n_s);
      const bool clamped = col.real != w * absolute.values[i] / (kTwoPi * n_s);
      try {
        const Triangulation t = triangulate(cal.camera, cal.projector, u, v, col.real);
        r.cloud.points.push_back(t.point);
        r.cloud.source_pixels.push_back({u, v});
        r.d_point_d_phase.push_back(clamped ? Vec3::Zero() : Vec3(t.d_point_d_up * column_per_phase));
        r.pixel_index.push_back(i);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateGeometry) throw;
        ++r.degenerate_pixels;
      }
    }
  }
  return r;
}

DepthImage cloud_to_depth(const PointCloud& cloud, const ProjectionMatrix& camera, int width, int height) {
  if (!cloud.has_provenance()) throw Error(ErrorCode::InvalidConfig, "cloud has no source pixels");
  DepthImage d{Image(width, height), Mask(width, height, 0)};
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    const auto [u, v] = cloud.source_pixels[k];
    if (u < 0 || v < 0 || u >= width || v >= height) continue;
    const double z = camera.R.row(2).dot(cloud.points[k]) + camera.T.z();
    if (!(z > 0.0)) continue;
    d.depth.at(u, v) = z;
    d.mask.at(u, v) = 1;
  }
  return d;
}

std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (k == 0 || k > n) throw Error(ErrorCode::InvalidK, "sample count must be in [1, n]");
  std::vector<double> xs(n), ys(n), zs(n), dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = points[i].x();
    ys[i] = points[i].y();
    zs[i] = points[i].z();
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  Rng rng(derive_seed(seed, 0xf9));
  std::size_t current = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t step = 0; step < k; ++step) {
    chosen.push_back(current);
    const double cx = xs[current], cy = ys[current], cz = zs[current];
    dist[current] = -1.0;
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = xs[i] - cx, dy = ys[i] - cy, dz = zs[i] - cz;
      const double d = std::min(dist[i], dx * dx + dy * dy + dz * dz);
      dist[i] = dist[i] < 0.0 ? -1.0 : d;
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

PointCloud select_points(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) {
    out.points.push_back(cloud.points[i]);
    if (cloud.has_provenance()) out.source_pixels.push_back(cloud.source_pixels[i]);
  }
  return out;
}

PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  const auto idx = farthest_point_indices(cloud.points, k, seed);
  return select_points(cloud, idx);
}

Normalized renormalize(const PointCloud& cloud) {
  if (cloud.size() == 0) throw Error(ErrorCode::DegenerateCloud, "empty cloud");
  Normalized n;
  for (const Vec3& p : cloud.points) n.centroid += p;
  n.centroid /= static_cast<double>(cloud.size());
  double best = -1.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = (cloud.points[i] - n.centroid).norm();
    if (d > best) {
      best = d;
      n.farthest = i;
    }
  }
  if (!(best > 1e-12 * std::max(1.0, n.centroid.norm()))) {
    throw Error(ErrorCode::DegenerateCloud, "all points coincide");
  }
  n.scale = best;
  n.cloud = apply_normalization(cloud, n.centroid, n.scale);
  return n;
}

Normalized renormalize(const PointCloud& cloud, std::size_t target, std::uint64_t seed) {
  if (target == 0 || cloud.size() <= target) return renormalize(cloud);
  return renormalize(farthest_point_sample(cloud, target, seed));
}

std::vector<Vec3> renormalize_backward(const Normalized& n, std::span<const Vec3> grad) {
  const std::size_t count = n.cloud.size();
  if (grad.size() != count) throw Error(ErrorCode::ShapeMismatch, "gradient size");
  Vec3 sum = Vec3::Zero();
  double d_scale = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    sum += grad[i];
    d_scale -= grad[i].dot(n.cloud.points[i]) / n.scale;
  }
  const Vec3 mean_grad = sum / static_cast<double>(count);
  const Vec3& y_far = n.cloud.points[n.farthest];
  const Vec3 scale_shared = d_scale * y_far / static_cast<double>(count);
  std::vector<Vec3> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = (grad[i] - mean_grad) / n.scale - scale_shared;
  out[n.farthest] += d_scale * y_far;
  return out;
}

PointCloud apply_normalization(const PointCloud& cloud, const Vec3& centroid, double scale) {
  PointCloud out = cloud;
  for (Vec3& p : out.points) p = (p - centroid) / scale;
  return out;
}

TransformParams default_transform_params() {
  TransformParams p;
  p.sigma_angle = 5.0 * std::numbers::pi / 180.0;
  p.sigma_translation = 0.05;
  return p;
}

Mat3 euler_xyz(double tx, double ty, double tz) { return rotation_z(tz) * rotation_y(ty) * rotation_x(tx); }

RigidTransform sample_transform(const TransformParams& p, double radius, std::uint64_t seed) {
  if (p.sigma_angle < 0.0 || p.sigma_translation < 0.0) throw Error(ErrorCode::InvalidConfig, "negative stddev");
  Rng rng(derive_seed(seed, 0x7a));
  std::normal_distribution<double> unit(0.0, 1.0);
  auto draw = [&](double mean, double sigma) { return sigma > 0.0 ? mean + sigma * unit(rng) : mean; };
  const double ax = draw(p.theta_x, p.sigma_angle);
  const double ay = draw(p.theta_y, p.sigma_angle);
  const double az = draw(p.theta_z, p.sigma_angle);
  const double ex = draw(p.eta_x, p.sigma_translation);
  const double ey = draw(p.eta_y, p.sigma_translation);
  RigidTransform t;
  t.rotation = euler_xyz(ax, ay, az);
  t.translation = Vec3(ex * radius, ey * radius, 0.0);
  return t;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out = cloud;
  for (Vec3& p : out.points) p = t.rotation * p + t.translation;
  return out;
}

double cloud_radius(const PointCloud& cloud) {
  if (cloud.size() == 0) return 0.0;
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : cloud.points) c += p;
  c /= static_cast<double>(cloud.size());
  double r = 0.0;
  for (const Vec3& p : cloud.points) r = std::max(r, (p - c).norm());
  return r;
}

PointCloud random_transform(const PointCloud& cloud, const TransformParams& params, std::uint64_t seed) {
  return apply_transform(cloud, sample_transform(params, cloud_radius(cloud), seed));
}

PhaseMap clip_phase(const PhaseMap& adv, const PhaseMap& orig) {
  if (adv.kind != PhaseKind::Absolute || orig.kind != PhaseKind::Absolute) {
    throw Error(ErrorCode::InvalidConfig, "clip needs absolute phase maps");
  }
  if (adv.width != orig.width || adv.height != orig.height || adv.fringe_count != orig.fringe_count) {
    throw Error(ErrorCode::ShapeMismatch, "clip maps differ in shape");
  }
  const double unit = kTwoPi * orig.fringe_count;
  const double band = 1.0 / orig.fringe_count;
  PhaseMap out = adv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!orig.mask[i]) continue;
    const double o = orig.values[i] / unit;
    const double lo = std::max(0.0, o - band), hi = std::min(1.0, o + band);
    out.values[i] = std::clamp(adv.values[i] / unit, lo, hi) * unit;
  }
  return out;
}

}  // namespace fringeforge
