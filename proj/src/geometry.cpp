// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace fringeforge {

namespace {

constexpr double kMaxCondition = 1e8;

Eigen::Matrix<double, 1, 4> camera_row(const Mat34& A, int r, double coord) {
  return A.row(r) - coord * A.row(2);
}

}  // namespace

ProjectionMatrix make_pinhole(double fx, double fy, double cx, double cy, const Mat3& rotation,
                              const Vec3& translation) {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "focal lengths must be positive");
  }
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorCode::InvalidConfig, "non-finite extrinsics");
  }
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    throw Error(ErrorCode::NonOrthonormalRotation, "rotation has negative determinant");
  }
  const double shift = (R - rotation).cwiseAbs().maxCoeff();
  if (shift > 1e-3) {
    std::ostringstream os;
    os << "re-orthonormalization moved an entry by " << shift;
    throw Error(ErrorCode::NonOrthonormalRotation, os.str());
  }

  ProjectionMatrix pm;
  pm.K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  pm.R = R;
  pm.T = translation;
  Mat34 Rt;
  Rt.leftCols<3>() = R;
  Rt.col(3) = translation;
  pm.A = pm.K * Rt;
  return pm;
}

PixelProjection project_point(const ProjectionMatrix& device, const Vec3& p_world) {
  const Vec3 h = device.A.leftCols<3>() * p_world + device.A.col(3);
  const double depth = device.R.row(2).dot(p_world) + device.T.z();
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "point is behind the device");
  }
  return {h.x() / h.z(), h.y() / h.z(), depth};
}

Ray back_project(const ProjectionMatrix& device, double u, double v) {
  const Vec3 pixel(u, v, 1.0);
  const Vec3 dir_device = device.K.triangularView<Eigen::Upper>().solve(pixel);
  return {device.center(), (device.R.transpose() * dir_device).normalized()};
}

Triangulation triangulate(const ProjectionMatrix& camera, const ProjectionMatrix& projector,
                          double u_c, double v_c, double u_p) {
  Eigen::Matrix<double, 3, 4> rows;
  rows.row(0) = camera_row(camera.A, 0, u_c);
  rows.row(1) = camera_row(camera.A, 1, v_c);
  rows.row(2) = camera_row(projector.A, 0, u_p);

  Vec3 scale;
  for (int r = 0; r < 3; ++r) {
    const double n = rows.row(r).leftCols<3>().norm();
    if (!(n > 0.0)) throw Error(ErrorCode::DegenerateGeometry, "zero equation row");
    scale[r] = 1.0 / n;
    rows.row(r) *= scale[r];
  }
  const Mat3 M = rows.leftCols<3>();
  const Vec3 b = -rows.col(3);

  const Eigen::PartialPivLU<Mat3> lu(M);
  const Mat3 inv = lu.inverse();
  const double cond = M.cwiseAbs().colwise().sum().maxCoeff() * inv.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(cond) || cond >= kMaxCondition) {
    throw Error(ErrorCode::DegenerateGeometry, "camera ray and projector plane are near parallel");
  }

  Triangulation t;
  t.point = lu.solve(b);
  // d/du_p of the projector row: -p3 . X~ (scaled), moved to the right-hand side.
  const double w_p = projector.A.row(2).leftCols<3>().dot(t.point) + projector.A(2, 3);
  t.d_point_d_up = inv.col(2) * (scale[2] * w_p);
  return t;
}

Vec3 view_ray_direction(const ProjectionMatrix& camera) {
  const Vec3 k_inv_e = camera.K.triangularView<Eigen::Upper>().solve(Vec3::UnitZ());
  return (camera.R.transpose() * k_inv_e).normalized();
}

std::vector<Vec3> constrain_gradient(std::span<const Vec3> grad, const Vec3& view_dir) {
  std::vector<Vec3> out;
  out.reserve(grad.size());
  for (const Vec3& g : grad) out.push_back(view_dir * view_dir.dot(g));
  return out;
}

std::vector<Vec3> zero_lateral_in_camera_frame(std::span<const Vec3> grad,
                                               const ProjectionMatrix& camera) {
  const Mat3 M = camera.K * camera.R;
  const Mat3 M_inv_t = M.inverse().transpose();
  std::vector<Vec3> out;
  out.reserve(grad.size());
  for (const Vec3& g : grad) {
    Vec3 g_cam = M_inv_t * g;
    g_cam.x() = 0.0;
    g_cam.y() = 0.0;
    out.push_back(M.transpose() * g_cam);
  }
  return out;
}

Mat3 rotation_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Mat3 rotation_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Mat3 rotation_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

Calibration make_desk_rig(const RigParams& p) {
  if (p.camera_width < 2 || p.camera_height < 2 || p.projector_width < 2 || p.projector_height < 2 ||
      !(p.standoff > 0.0) || !(p.baseline > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid rig parameters");
  }
  Calibration cal;
  cal.camera = make_pinhole(p.camera_focal, p.camera_focal, 0.5 * (p.camera_width - 1),
                            0.5 * (p.camera_height - 1), Mat3::Identity(), Vec3::Zero());

  const Vec3 center(p.baseline, 0.0, 0.0);
  const Vec3 z_axis = (Vec3(0.0, 0.0, p.standoff) - center).normalized();
  const Vec3 x_axis = Vec3::UnitY().cross(z_axis).normalized();
  const Vec3 y_axis = z_axis.cross(x_axis);
  Mat3 R;
  R.row(0) = x_axis.transpose();
  R.row(1) = y_axis.transpose();
  R.row(2) = z_axis.transpose();
  cal.projector = make_pinhole(p.projector_focal, p.projector_focal, 0.5 * (p.projector_width - 1),
                               0.5 * (p.projector_height - 1), R, -R * center);
  cal.projector_width = p.projector_width;
  cal.projector_height = p.projector_height;
  return cal;
}

}  // namespace fringeforge
