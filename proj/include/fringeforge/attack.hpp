// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/fringe.hpp"
#include "fringeforge/photometric.hpp"
#include "fringeforge/recognize.hpp"
#include "fringeforge/reconstruct.hpp"
#include "fringeforge/scan.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fringeforge {

struct SensitivityMap {
  int width = 0;
  int height = 0;
  Image sen1;
  Image sen2;
  Image weights;  // sen1 + sen2
  double u0 = 0.0;
  double v0 = 0.0;
  double w_s = 16.0;
  int radius = 2;
};

/// Sen1 = exp(-|(u,v) - (u0,v0)| / w_s); Sen2 = 1 / (mask-true count in the
/// (2r+1)^2 window, floor 1).
SensitivityMap sensitivity_map(const PhaseMap& absolute, double u0, double v0, double w_s, int radius);

/// Mask centroid, or the image center when the mask is empty.
std::pair<double, double> face_center(const PhaseMap& absolute);

enum class DistanceKind { SensitivityL1, L2 };

struct AttackConfig {
  double lambda_min = 1e-5;
  double lambda_max = 1e5;
  int search_steps = 10;
  int iterations = 100;
  double kappa = 30.0;
  double accept_margin = 0.0;  // surrogate candidates need adv loss < -accept_margin
  double alpha = 0.01;                       // normalized phase units per step
  double alpha_illumination = 4.0 / 255.0;  // intensity units per step
  double init_noise = 1e-5;
  int transform_samples = 4;
  TransformParams transforms = default_transform_params();
  double lambda1 = 1.0;
  double lambda2 = -1.0;  // negative: use the searched lambda
  AttackMode mode = AttackMode::Dodge;
  int label = 0;    // true identity
  int target = -1;  // impersonation target
  std::uint64_t seed = 1;

  bool direction_constraint = true;
  bool renormalize_in_loop = true;
  bool tiv = true;
  DistanceKind distance = DistanceKind::SensitivityL1;

  double sensitivity_width = -1.0;  // w_s; negative: image width / 4
  int sensitivity_radius = 2;
  int abort_checks = 10;  // loss-plateau checks per lambda run (phase shifting only); 0 disables

  // Phase superposition.
  std::optional<double> assumed_gamma;  // gamma used inside the loop; none: linear
  double verify_noise = 0.005;
  double illumination_accept_margin = 2.0;  // surrogate candidates need adv loss < -this
  double surrogate_rho = 2.0;
  double background_sigma = 3.0;

  int loss_target() const { return mode == AttackMode::Dodge ? label : target; }
  void validate(int classes) const;
};

struct TraceRow {
  double lambda = 0.0;
  int iteration = 0;
  double adv_loss = 0.0;
  double distance = 0.0;
  double total = 0.0;
  double margin = 0.0;
};

struct LambdaStep {
  double lambda = 0.0;
  bool surrogate_success = false;
  bool success = false;
  double distance = 0.0;
};

struct AttackResult {
  bool success = false;
  bool surrogate_success = false;
  AttackMode mode = AttackMode::Dodge;
  int label = 0;
  int target = 0;
  double lambda = 0.0;
  Logits logits;        // re-simulated, preprocessed adversarial cloud
  Logits clean_logits;  // re-simulated clean cloud
  double final_margin = 0.0;
  double distance = 0.0;  // distance loss of the returned candidate
  double l1 = 0.0;        // sum |phi' - phi| over pixels (rad)
  double l2 = 0.0;        // sqrt(sum (phi' - phi)^2)
  double rmse = 0.0;      // sum |d| / n^2 on normalized clouds
  double mean_distance = 0.0;
  int iterations_run = 0;

  PhaseMap clean_phase;
  PhaseMap adversarial_phase;  // intended (phase shifting) or surrogate (superposition)
  PointCloud clean_cloud;
  PointCloud adversarial_cloud;  // re-simulated
  std::optional<FringePatternSet> patterns;  // phase shifting
  std::optional<Image> illumination;         // superposition
  int conflicts = 0;
  double max_column_shift = 0.0;
  int order_changes = 0;  // pixels whose decoded fringe order moved

  std::vector<TraceRow> trace;
  std::vector<LambdaStep> search;
  std::string note;
};

/// Everything tiv_adv_loss needs beyond the phase map.
struct AdvLossSetup {
  const ModelParams* model = nullptr;
  const Calibration* calibration = nullptr;
  AttackMode mode = AttackMode::Dodge;
  int target = 0;
  double kappa = 30.0;
  int samples = 4;
  bool tiv = true;
  TransformParams transforms = default_transform_params();
  std::uint64_t fps_seed = 0;
  // Renormalization frozen at clean values when set.
  bool frozen = false;
  Vec3 frozen_centroid = Vec3::Zero();
  double frozen_scale = 1.0;
  std::vector<std::int64_t> frozen_pixels;  // FPS selection as (v << 32 | u) keys
};

struct AdvLossEval {
  double loss = 0.0;
  std::vector<double> grad_phase;  // per pixel, row-major
  std::vector<Vec3> grad_points;   // per point of the reconstruction
  Reconstruction reconstruction;
  Logits logits;  // untransformed sample's logits (first sample when tiv)
};

/// Monte-Carlo 3D-TI loss: mean over samples of logits_loss(M(N(T(h(phi))))).
AdvLossEval tiv_adv_loss(const PhaseMap& absolute, const AdvLossSetup& setup, std::uint64_t seed);

/// Same chain from an explicit cloud (free-point parameterization).
AdvLossEval tiv_adv_loss_cloud(const PointCloud& cloud, const AdvLossSetup& setup, std::uint64_t seed);

/// One scene under attack: the physical world plus the scanner.
struct AttackScene {
  const SceneSurface* scene = nullptr;
  const Calibration* calibration = nullptr;
  ScanConfig scan;
  RenderOptions world;  // true physical render options (gamma, noise)
  double reference_depth = 1500.0;  // carrier plane for the single-shot scanner
};

using LambdaAttack = std::function<AttackResult(double lambda)>;

/// Bisection on log10(lambda): success raises lambda, failure lowers it.
/// Returns the successful step with minimum distance; AllStepsFailed otherwise.
AttackResult lambda_search(const LambdaAttack& attack, const AttackConfig& config);

/// Phase shifting attack. Returns a best-effort failed result when no lambda succeeds.
AttackResult phase_shifting_attack(const AttackScene& scene, const ModelParams& model, const AttackConfig& config);

/// Inner loop of the phase shifting attack at a fixed lambda.
AttackResult phase_shifting_at_lambda(const AttackScene& scene, const ModelParams& model, const AttackConfig& config,
                                      double lambda);

/// Re-simulates a pattern set on the true scene and classifies the result.
struct Verification {
  PointCloud cloud;
  PhaseMap absolute;
  Grid<int> order;
  Logits logits;
  bool success = false;
};
Verification verify_patterns(const AttackScene& scene, const ModelParams& model, const FringePatternSet& patterns,
                             const AttackConfig& config, const std::optional<RigidTransform>& test_transform = {});

/// Classical single-shot phase estimator (quadrature demodulation against the
/// reference-plane carrier).
struct SurrogateParams {
  int fringe_count = 16;
  int projector_width = 1600;
  Image carrier;  // reference-plane projector phase per camera pixel
  double rho = 2.0;
  double background_sigma = 3.0;
  double intensity_floor = 0.02;
  double modulation_threshold = kDefaultModulationThreshold;
};

SurrogateParams make_surrogate(const Calibration& calibration, int fringe_count, double reference_depth, int width,
                               int height);

struct SurrogateOutput {
  PhaseMap wrapped;
  Mask region;
  Image smoothed_region;
  Image mc;
  Image ms;
};

SurrogateOutput fringe_analysis_surrogate(const Image& image, const SurrogateParams& params);
/// dL/dI from dL/dphi_w (row-major, masked pixels ignored).
Image surrogate_backward(const SurrogateOutput& forward, const SurrogateParams& params,
                         const std::vector<double>& grad_phase);

/// RMSE as printed: sum over matched points of |a - b| divided by n^2, on
/// clouds normalized with the clean cloud's centroid and scale. mean_distance
/// is the plain mean of |a - b|.
struct RmseResult {
  double rmse = 0.0;
  double mean_distance = 0.0;
  std::size_t matched = 0;
};
RmseResult rmse_aligned(const PointCloud& adversarial, const PointCloud& clean);
RmseResult rmse_aligned(const std::vector<PointCloud>& adversarial, const std::vector<PointCloud>& clean);

/// Single-shot scanner used by the superposition attack: phase from the
/// surrogate on the first shift capture, order from the gray captures.
struct SingleShotScan {
  SurrogateOutput surrogate;
  UnwrapResult unwrapped;
  Reconstruction reconstruction;
};
SingleShotScan single_shot_scan(const CaptureRig& rig, const FringePatternSet& patterns,
                                const SurrogateParams& surrogate, const Image* illumination);

/// Single-shot counterpart of scan_face (same scene, options and noise seed).
PointCloud scan_face_single_shot(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration,
                                 const FringePatternSet& patterns, const SurrogateParams& surrogate);

/// Phase superposition attack.
AttackResult phase_superposition_attack(const AttackScene& scene, const ModelParams& model,
                                        const AttackConfig& config);
AttackResult phase_superposition_at_lambda(const AttackScene& scene, const ModelParams& model,
                                           const AttackConfig& config, double lambda);

/// Re-simulates an attacker illumination on the single-shot scanner of the
/// true world (gamma, verify_noise) and classifies the result.
Verification verify_illumination(const AttackScene& scene, const ModelParams& model, const Image& illumination,
                                 const AttackConfig& config, const std::optional<RigidTransform>& test_transform = {});

/// Classify a cloud the way verification does (FPS seed from the config).
Logits classify_cloud(const ModelParams& model, const PointCloud& cloud, std::uint64_t fps_seed,
                      const Calibration& calibration, int width, int height);

std::uint64_t verification_fps_seed(const AttackConfig& config);

}  // namespace fringeforge
