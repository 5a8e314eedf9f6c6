// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/core.hpp"

#include <span>
#include <vector>

namespace fringeforge {

/// Pinhole device model A = K [R | T] with the world-to-device convention
/// p_device = R * p_world + T. Pixel centers sit at integer coordinates.
struct ProjectionMatrix {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();
  Mat34 A = Mat34::Zero();

  /// Device center in world coordinates.
  Vec3 center() const { return -R.transpose() * T; }
  Vec3 to_device(const Vec3& p_world) const { return R * p_world + T; }
};

/// Builds K[R|T]. The rotation is re-orthonormalized (polar factor); an entry
/// moving by more than 1e-3 raises NonOrthonormalRotation.
ProjectionMatrix make_pinhole(double fx, double fy, double cx, double cy, const Mat3& rotation,
                              const Vec3& translation);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // z in the device frame, mm
};

PixelProjection project_point(const ProjectionMatrix& device, const Vec3& p_world);

/// Ray through pixel (u, v) in world coordinates.
Ray back_project(const ProjectionMatrix& device, double u, double v);

struct Triangulation {
  Vec3 point;
  Vec3 d_point_d_up;  // derivative of the point with respect to the projector column
};

/// Intersects the camera ray of (u_c, v_c) with the projector column plane u_p.
/// Two camera rows and one projector row, solved by partial-pivot elimination
/// after row equilibration. Throws DegenerateGeometry when cond_1 >= 1e8.
Triangulation triangulate(const ProjectionMatrix& camera, const ProjectionMatrix& projector,
                          double u_c, double v_c, double u_p);

/// normalize(R^-1 K^-1 e), e = (0, 0, 1).
Vec3 view_ray_direction(const ProjectionMatrix& camera);

/// Keeps only the component of each gradient along view_dir: g -> d (d . g).
std::vector<Vec3> constrain_gradient(std::span<const Vec3> grad, const Vec3& view_dir);

/// Literal camera-frame form: express g in the frame P' = K R P (covector
/// pull-back), zero the two lateral components, map back. Agrees with
/// constrain_gradient whenever K has zero skew and principal point.
std::vector<Vec3> zero_lateral_in_camera_frame(std::span<const Vec3> grad,
                                               const ProjectionMatrix& camera);

struct Calibration {
  ProjectionMatrix camera;
  ProjectionMatrix projector;
  int projector_width = 0;  // pixels
  int projector_height = 0;
};

/// Desk-scale camera/projector layout. The camera sits at the world origin
/// looking down +z; the projector is offset along +x by the baseline and aimed
/// at the point (0, 0, standoff).
struct RigParams {
  int camera_width = 64;
  int camera_height = 64;
  double camera_focal = 470.0;
  int projector_width = 1600;
  int projector_height = 1200;
  double projector_focal = 8000.0;
  double baseline = 250.0;
  double standoff = 1500.0;
};

Calibration make_desk_rig(const RigParams& params);

/// Rotation about a single axis (right-handed, active).
Mat3 rotation_x(double angle);
Mat3 rotation_y(double angle);
Mat3 rotation_z(double angle);

}  // namespace fringeforge
