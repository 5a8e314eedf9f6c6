// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/geometry.hpp"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace fringeforge {
namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Independent 3x4 product, written out element by element.
Mat34 product_oracle(const Mat3& K, const Mat3& R, const Vec3& T) {
  double Rt[3][4];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) Rt[i][j] = R(i, j);
    Rt[i][3] = T[i];
  }
  Mat34 A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += K(i, k) * Rt[k][j];
      A(i, j) = s;
    }
  return A;
}

TEST(MakePinhole, IdentityDevice) {
  const auto pm = make_pinhole(1, 1, 0, 0, Mat3::Identity(), Vec3::Zero());
  Mat34 expected = Mat34::Zero();
  expected.leftCols<3>() = Mat3::Identity();
  EXPECT_TRUE(pm.A.isApprox(expected, 0.0) || (pm.A - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST(MakePinhole, PureScaling) {
  const auto pm = make_pinhole(2, 2, 0, 0, Mat3::Identity(), Vec3::Zero());
  Mat34 expected = Mat34::Zero();
  expected(0, 0) = 2;
  expected(1, 1) = 2;
  expected(2, 2) = 1;
  EXPECT_EQ((pm.A - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MakePinhole, MatchesProductOracleAndInvariants) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> f(100.0, 5000.0), c(0.0, 1600.0), t(-500.0, 500.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 R = random_rotation(rng);
    const Vec3 T(t(rng), t(rng), t(rng));
    const double fx = f(rng), fy = f(rng), cx = c(rng), cy = c(rng);
    const auto pm = make_pinhole(fx, fy, cx, cy, R, T);
    EXPECT_LE((pm.R * pm.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(pm.R.determinant(), 1.0, 1e-9);
    EXPECT_GT(pm.K(0, 0), 0.0);
    EXPECT_GT(pm.K(1, 1), 0.0);
    EXPECT_EQ(pm.K(1, 0), 0.0);
    EXPECT_EQ(pm.K(2, 0), 0.0);
    EXPECT_EQ(pm.K(2, 1), 0.0);
    const Mat34 oracle = product_oracle(pm.K, pm.R, pm.T);
    EXPECT_LE((pm.A - oracle).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
  }
}

TEST(MakePinhole, ReorthonormalizesSmallDrift) {
  Mat3 R = rotation_z(0.3);
  R(0, 1) += 5e-7;
  const auto pm = make_pinhole(1, 1, 0, 0, R, Vec3::Zero());
  EXPECT_LE((pm.R * pm.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MakePinhole, RejectsNonOrthonormal) {
  Mat3 R = Mat3::Identity();
  R(0, 1) = 0.05;
  try {
    make_pinhole(1, 1, 0, 0, R, Vec3::Zero());
    FAIL() << "expected NonOrthonormalRotation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonOrthonormalRotation);
  }
  EXPECT_THROW(make_pinhole(0, 1, 0, 0, Mat3::Identity(), Vec3::Zero()), Error);
}

TEST(ProjectPoint, OnAxisAndPerspectiveDivision) {
  const auto pm = make_pinhole(1, 1, 0, 0, Mat3::Identity(), Vec3::Zero());
  auto p = project_point(pm, Vec3(0, 0, 5));
  EXPECT_DOUBLE_EQ(p.u, 0.0);
  EXPECT_DOUBLE_EQ(p.v, 0.0);
  EXPECT_DOUBLE_EQ(p.depth, 5.0);
  p = project_point(pm, Vec3(1, 2, 2));
  EXPECT_DOUBLE_EQ(p.u, 0.5);
  EXPECT_DOUBLE_EQ(p.v, 1.0);
  EXPECT_DOUBLE_EQ(p.depth, 2.0);
}

TEST(ProjectPoint, BehindCamera) {
  const auto pm = make_pinhole(1, 1, 0, 0, Mat3::Identity(), Vec3::Zero());
  try {
    project_point(pm, Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
  EXPECT_THROW(project_point(pm, Vec3(1, 1, 0)), Error);
}

TEST(ProjectPoint, MatchesHomogeneousOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> f(100.0, 3000.0), c(0.0, 1000.0), t(-100.0, 100.0), d(-200, 200);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto pm = make_pinhole(f(rng), f(rng), c(rng), c(rng), random_rotation(rng), Vec3(t(rng), t(rng), t(rng)));
    const Vec3 p = pm.center() + pm.R.transpose() * Vec3(d(rng), d(rng), 1000.0 + d(rng));
    const Mat34 A = product_oracle(pm.K, pm.R, pm.T);
    double h[3];
    for (int i = 0; i < 3; ++i) h[i] = A(i, 0) * p[0] + A(i, 1) * p[1] + A(i, 2) * p[2] + A(i, 3);
    const auto proj = project_point(pm, p);
    EXPECT_NEAR(proj.u, h[0] / h[2], 1e-10 * std::max(1.0, std::abs(proj.u)));
    EXPECT_NEAR(proj.v, h[1] / h[2], 1e-10 * std::max(1.0, std::abs(proj.v)));
    ++checked;
  }
  EXPECT_EQ(checked, 500);
}

class DeskRigTest : public ::testing::Test {
 protected:
  Calibration cal = make_desk_rig(RigParams{});
};

TEST_F(DeskRigTest, TriangulationRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lateral(-90.0, 90.0), depth(1380.0, 1560.0);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p(lateral(rng), lateral(rng), depth(rng));
    const auto c = project_point(cal.camera, p);
    const auto q = project_point(cal.projector, p);
    const auto t = triangulate(cal.camera, cal.projector, c.u, c.v, q.u);
    worst = std::max(worst, (t.point - p).norm());
  }
  EXPECT_LT(worst, 1e-8);
}

TEST_F(DeskRigTest, ProjectorColumnMovesPointAlongCameraRay) {
  const double uc = 20.0, vc = 41.0;
  const Ray ray = back_project(cal.camera, uc, vc);
  const auto a = triangulate(cal.camera, cal.projector, uc, vc, 800.0);
  const auto b = triangulate(cal.camera, cal.projector, uc, vc, 803.5);
  const Vec3 delta = b.point - a.point;
  ASSERT_GT(delta.norm(), 0.0);
  EXPECT_LT(delta.normalized().cross(ray.direction).norm(), 1e-9);
  EXPECT_LT((a.point - ray.origin).normalized().cross(ray.direction).norm(), 1e-12);
}

TEST_F(DeskRigTest, TriangulationDerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pix(0.0, 63.0), col(400.0, 1200.0);
  const double h = 1e-4;
  for (int i = 0; i < 200; ++i) {
    const double uc = pix(rng), vc = pix(rng), up = col(rng);
    const auto t = triangulate(cal.camera, cal.projector, uc, vc, up);
    const Vec3 fd = (triangulate(cal.camera, cal.projector, uc, vc, up + h).point -
                     triangulate(cal.camera, cal.projector, uc, vc, up - h).point) / (2 * h);
    EXPECT_NEAR(t.d_point_d_up.z(), fd.z(), 1e-5 * std::abs(fd.z()));
    EXPECT_LE((t.d_point_d_up - fd).norm(), 1e-5 * fd.norm());
  }
}

TEST(Triangulate, DegenerateWhenDevicesCoincide) {
  const auto cam = make_pinhole(500, 500, 32, 32, Mat3::Identity(), Vec3::Zero());
  try {
    triangulate(cam, cam, 10.0, 12.0, 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGeometry);
  }
}

TEST(ViewRayDirection, IdentityDevice) {
  const auto pm = make_pinhole(1, 1, 0, 0, Mat3::Identity(), Vec3::Zero());
  EXPECT_LE((view_ray_direction(pm) - Vec3(0, 0, 1)).norm(), 1e-15);
}

// p_cam = R p_world: a +90 degree rotation about x maps world +y onto the
// camera's optical axis, so the view direction in world is +y.
TEST(ViewRayDirection, RotationConventionFixture) {
  const auto pm = make_pinhole(1, 1, 0, 0, rotation_x(std::numbers::pi / 2), Vec3::Zero());
  EXPECT_LE((view_ray_direction(pm) - Vec3(0, 1, 0)).norm(), 1e-12);
  EXPECT_NEAR((pm.to_device(Vec3(0, 1, 0)) - Vec3(0, 0, 1)).norm(), 0.0, 1e-12);
}

TEST(ViewRayDirection, UnitNorm) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> f(10.0, 3000.0), c(-500.0, 500.0);
  for (int i = 0; i < 100; ++i) {
    const auto pm = make_pinhole(f(rng), f(rng), c(rng), c(rng), random_rotation(rng), Vec3::Zero());
    EXPECT_NEAR(view_ray_direction(pm).norm(), 1.0, 1e-12);
  }
}

TEST(ConstrainGradient, ParallelOrthogonalAndDotOracle) {
  const auto pm = make_pinhole(1, 1, 0, 0, Mat3::Identity(), Vec3::Zero());
  const Vec3 d = view_ray_direction(pm);
  std::vector<Vec3> parallel{3.5 * d};
  EXPECT_LE((constrain_gradient(parallel, d)[0] - parallel[0]).norm(), 1e-10);
  std::vector<Vec3> orth{Vec3(1.0, -2.0, 0.0)};
  EXPECT_LE(constrain_gradient(orth, d)[0].norm(), 1e-10);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> g(64);
  for (auto& x : g) x = Vec3(n(rng), n(rng), n(rng));
  const auto out = constrain_gradient(g, d);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dot = g[i][0] * d[0] + g[i][1] * d[1] + g[i][2] * d[2];
    EXPECT_LE((out[i] - dot * d).norm(), 1e-10);
  }
}

TEST(ConstrainGradient, AgreesWithCameraFrameZeroingForCenteredIntrinsics) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pm = make_pinhole(470.0, 470.0, 0.0, 0.0, random_rotation(rng), Vec3(1, 2, 3));
    const Vec3 d = view_ray_direction(pm);
    std::vector<Vec3> g{Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))};
    const auto a = constrain_gradient(g, d);
    const auto b = zero_lateral_in_camera_frame(g, pm);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE((a[i] - b[i]).norm(), 1e-10);
  }
}

TEST_F(DeskRigTest, DepthOnlyDisplacementKeepsPixel) {
  const Vec3 d = view_ray_direction(cal.camera);
  int checked = 0;
  for (int v = 0; v < 64; v += 3) {
    for (int u = 0; u < 64; u += 3) {
      const Ray ray = back_project(cal.camera, u, v);
      const Vec3 p = ray.origin + ray.direction * (1500.0 / ray.direction.z());
      for (double s : {-5.0, -2.5, 2.5, 5.0}) {
        const auto q = project_point(cal.camera, p + s * d);
        EXPECT_EQ(std::lround(q.u), u);
        EXPECT_EQ(std::lround(q.v), v);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000);
}

}  // namespace
}  // namespace fringeforge
