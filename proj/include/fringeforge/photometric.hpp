// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/core.hpp"
#include "fringeforge/fringe.hpp"
#include "fringeforge/geometry.hpp"

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fringeforge {

/// Surface sampled on the camera grid. depth is the camera-frame z of the
/// point seen by each pixel; normals are world-frame unit vectors facing the
/// camera.
struct SceneSurface {
  int width = 0;
  int height = 0;
  Image depth;
  Image albedo;
  std::vector<Vec3> normals;

  std::size_t size() const { return depth.size(); }
};

/// Amplitude scales of the face generator, in mm. Each identity draws its
/// features around these values; all zero gives a flat plane.
struct FaceParams {
  int width = 64;
  int height = 64;
  double standoff = 1500.0;
  double half_width = 68.0;
  double half_height = 90.0;
  double relief = 60.0;
  double nose = 24.0;
  double brow = 7.0;
  double eye = 10.0;
  double cheek = 7.0;
  double chin = 9.0;
  double mouth = 4.0;
  double identity_spread = 0.35;   // relative spread of identity features
  double expression_jitter = 1.0;  // scale of per-capture expression changes
};

struct FaceBump {
  double x = 0.0;
  double y = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double amp = 0.0;
};

/// One sampled face: an elliptic dome plus Gaussian features, all faded out
/// at the ellipse boundary.
struct FaceShape {
  double half_width = 1.0;
  double half_height = 1.0;
  double relief = 0.0;
  std::vector<FaceBump> bumps;
  double albedo_base = 0.7;
  std::vector<std::array<double, 4>> albedo_waves;  // amp, kx, ky, phase
};

FaceShape sample_face_shape(std::uint64_t identity_seed, const FaceParams& params,
                            std::uint64_t expression_seed = 0);

/// Height of the face toward the camera at lateral position (x, y) mm, with
/// optional partial derivatives.
double face_height(const FaceShape& shape, double x, double y, double* dx = nullptr,
                   double* dy = nullptr);
double face_albedo(const FaceShape& shape, double x, double y);

/// Camera-frame depth z(u, v) = standoff - h(standoff x_n, standoff y_n), with
/// analytic normals.
SceneSurface synth_face(std::uint64_t identity_seed, const FaceParams& params,
                        const ProjectionMatrix& camera, std::uint64_t expression_seed = 0);
SceneSurface surface_from_shape(const FaceShape& shape, const FaceParams& params,
                                const ProjectionMatrix& camera);

/// World point seen by pixel (u, v) at the stored depth.
Vec3 surface_point(const SceneSurface& scene, const ProjectionMatrix& camera, int u, int v);

/// Normals from central differences of the back-projected depth grid.
std::vector<Vec3> normals_from_depth(const Image& depth, const ProjectionMatrix& camera);

/// Multiplicative albedo error in [1 - amount, 1 + amount], clamped to [0, 1].
SceneSurface perturb_albedo(const SceneSurface& scene, double amount, std::uint64_t seed);

/// Per-pixel light vectors (direction toward the source scaled by radiance).
struct LightField {
  int width = 0;
  int height = 0;
  std::vector<Vec3> scanner;
  std::vector<Vec3> attacker;
};

double shade_pixel(double albedo, const Vec3& normal, const Vec3& light, bool clamp_dot = true);
Image lambertian_shade(const SceneSurface& scene, const LightField& lights, bool clamp_dot = true);

/// g(u) = (tanh(gamma (2u - 1)) + 1) / 2.
struct GammaModel {
  double gamma = 1.0;

  double apply(double u) const;
  double d_du(double u) const;
  double d_dgamma(double u) const;
};

double gamma_distort(double u, const GammaModel& model);

struct GammaFit {
  GammaModel model;
  double residual_rms = 0.0;
};

/// Golden-section least squares over gamma in [1e-3, 20].
GammaFit fit_gamma(std::span<const std::pair<double, double>> samples);

struct RenderOptions {
  double scanner_power = 0.6;
  double attacker_power = 0.3;
  double ambient = 0.05;
  std::optional<GammaModel> gamma;  // none: linear projectors
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  bool clamp_dot = true;
  // Attacker projector pose; none means aligned 1:1 with the camera grid.
  std::optional<ProjectionMatrix> attacker;
  int attacker_width = 0;
  int attacker_height = 0;
};

/// Precomputed per-pixel geometry for rendering one scene on one rig.
class CaptureRig {
 public:
  CaptureRig(const SceneSurface& scene, const Calibration& calibration, const RenderOptions& options);

  int width() const { return width_; }
  int height() const { return height_; }
  const RenderOptions& options() const { return options_; }
  const Calibration& calibration() const { return calibration_; }

  /// Camera image under the scanner pattern and optional attacker image.
  /// capture_index selects the noise stream so repeated captures differ.
  Image render(const PatternImage& pattern, const Image* extra = nullptr, std::uint64_t capture_index = 0) const;

  /// Pull-back of dL/dI to dL/dextra for a render with the same inputs.
  /// Pixels where the clamp is active pass no gradient.
  Image backward_extra(const PatternImage& pattern, const Image& extra, const Image& grad_image,
                       std::uint64_t capture_index = 0) const;

  /// Pixels whose surface point lands inside the projector image.
  const Mask& in_view() const { return in_view_; }
  ProjectorCorrespondence correspondence() const;
  const std::vector<Vec3>& points() const { return points_; }

  int extra_width() const;
  int extra_height() const;

 private:
  struct Tap {
    std::int32_t index = -1;
    double weight = 0.0;
  };

  double emit(double value) const;
  double emit_slope(double value) const;
  void row_noise(std::uint64_t capture_index, int row, std::vector<double>& buffer) const;
  double pre_clamp(std::size_t i, const PatternImage& pattern, const Image* extra) const;

  int width_ = 0;
  int height_ = 0;
  Calibration calibration_;
  RenderOptions options_;
  std::vector<Vec3> points_;
  std::vector<double> u_p_;
  std::vector<double> v_p_;
  std::vector<double> scanner_gain_;   // a * (n . d1) * P1
  std::vector<double> attacker_gain_;  // a * (n . d2) * P2
  std::vector<double> ambient_;        // a * ambient
  std::vector<std::array<Tap, 4>> taps_;
  Mask in_view_;
};

Image render_capture(const SceneSurface& scene, const Calibration& calibration, const PatternImage& pattern,
                     const Image* extra, const RenderOptions& options);

}  // namespace fringeforge
