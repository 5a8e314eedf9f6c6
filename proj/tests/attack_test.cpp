// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/attack.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace fringeforge {
namespace {

constexpr double kPi = std::numbers::pi;

SceneSurface flat_plane(int w, int h, double depth, double albedo) {
  SceneSurface s;
  s.width = w;
  s.height = h;
  s.depth = Image(w, h, depth);
  s.albedo = Image(w, h, albedo);
  s.normals.assign(s.depth.size(), Vec3(0, 0, -1));
  return s;
}

double wrap(double x) { return x - 2.0 * kPi * std::round(x / (2.0 * kPi)); }

// Relative agreement with a floor tied to the gradient's overall scale.
void expect_close_grad(double analytic, double numeric, double rel, double scale) {
  EXPECT_LE(std::abs(analytic - numeric), rel * std::max({std::abs(analytic), std::abs(numeric), scale}))
      << "analytic " << analytic << " numeric " << numeric;
}

struct FaceFixture {
  FaceSetConfig faces;
  Calibration cal = make_desk_rig(RigParams{});
  SceneSurface scene;
  ScanResult clean;
  FaceFixture() {
    scene = face_scene(faces, face_sample(faces, 3, 0), cal);
    const CaptureRig rig(scene, cal, RenderOptions{});
    clean = run_scan(rig, scanner_patterns(cal, faces.scan), faces.scan);
  }
};

const FaceFixture& face() {
  static const FaceFixture f;
  return f;
}

AdvLossSetup loss_setup(const ModelParams& m, const Calibration& cal) {
  AdvLossSetup s;
  s.model = &m;
  s.calibration = &cal;
  s.mode = AttackMode::Impersonate;
  s.target = 1;
  s.kappa = 1e6;
  s.fps_seed = 11;
  return s;
}

// ---------------------------------------------------------------------------

TEST(Sensitivity, CenterAndInterior) {
  PhaseMap a(9, 9, PhaseKind::Absolute, 16);
  std::fill(a.mask.begin(), a.mask.end(), 1);
  const SensitivityMap s = sensitivity_map(a, 4.0, 4.0, 2.0, 2);
  EXPECT_DOUBLE_EQ(s.sen1.at(4, 4), 1.0);
  EXPECT_DOUBLE_EQ(s.sen2.at(4, 4), 1.0 / 25.0);
  EXPECT_DOUBLE_EQ(s.sen2.at(0, 0), 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(s.weights.at(4, 4), s.sen1.at(4, 4) + s.sen2.at(4, 4));
  EXPECT_NEAR(s.sen1.at(6, 4), std::exp(-1.0), 1e-15);
}

TEST(Sensitivity, FalloffAlongRays) {
  PhaseMap a(31, 31, PhaseKind::Absolute, 16);
  std::fill(a.mask.begin(), a.mask.end(), 1);
  const SensitivityMap s = sensitivity_map(a, 15.0, 15.0, 7.75, 2);
  for (const auto [du, dv] : {std::pair{1, 0}, {0, 1}, {1, 1}, {-1, 2}}) {
    double prev = 2.0;
    for (int k = 0; k < 7; ++k) {
      const double v = s.sen1.at(15 + k * du, 15 + k * dv);
      EXPECT_LT(v, prev);
      EXPECT_GT(v, 0.0);
      prev = v;
    }
  }
}

TEST(Sensitivity, EmptyNeighborhoodFloorsAtOne) {
  PhaseMap a(5, 5, PhaseKind::Absolute, 16);
  const SensitivityMap s = sensitivity_map(a, 2.0, 2.0, 1.0, 1);
  for (double v : s.sen2.data) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(sensitivity_map(a, 2.0, 2.0, 0.0, 1), Error);
}

TEST(Sensitivity, FaceCenterIsMaskCentroid) {
  PhaseMap a(10, 6, PhaseKind::Absolute, 16);
  a.mask[a.index(2, 1)] = 1;
  a.mask[a.index(6, 3)] = 1;
  const auto [u, v] = face_center(a);
  EXPECT_DOUBLE_EQ(u, 4.0);
  EXPECT_DOUBLE_EQ(v, 2.0);
  const auto [eu, ev] = face_center(PhaseMap(10, 6, PhaseKind::Absolute, 16));
  EXPECT_DOUBLE_EQ(eu, 4.5);
  EXPECT_DOUBLE_EQ(ev, 2.5);
}

// ---------------------------------------------------------------------------

TEST(TivLoss, DegenerateExpectationEqualsPlainLoss) {
  const auto& f = face();
  const ModelParams m = init_model(Architecture::PointMlp, 5, {}, 21);
  AdvLossSetup s = loss_setup(m, f.cal);
  s.kappa = 30.0;
  s.samples = 1;
  s.transforms.sigma_angle = 0.0;
  s.transforms.sigma_translation = 0.0;
  const AdvLossEval ev = tiv_adv_loss(f.clean.unwrapped.absolute, s, 5);
  const Logits z = classify(m, preprocess_cloud(m, f.clean.reconstruction.cloud, s.fps_seed).cloud);
  EXPECT_NEAR(ev.loss, logits_loss(z, s.target, s.mode, s.kappa).value, 1e-12);
  EXPECT_LT((ev.logits - z).norm(), 1e-12);
}

TEST(TivLoss, MonteCarloVarianceShrinksWithSampleCount) {
  const auto& f = face();
  const ModelParams m = init_model(Architecture::PointMlp, 5, {}, 22);
  AdvLossSetup s = loss_setup(m, f.cal);
  const PointCloud& cloud = f.clean.reconstruction.cloud;
  auto variance = [&](int count) {
    s.samples = count;
    std::vector<double> v;
    for (int r = 0; r < 100; ++r) v.push_back(tiv_adv_loss_cloud(cloud, s, derive_seed(1000 + count, r)).loss);
    double mean = 0.0;
    for (double x : v) mean += x / v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
    return var;
  };
  const double v1 = variance(1), v8 = variance(8);
  ASSERT_GT(v1, 0.0);
  // Sample variance ratio of 100 draws; 1/8 expected.
  EXPECT_GT(v8 / v1, 0.125 * 0.5);
  EXPECT_LT(v8 / v1, 0.125 * 2.0);
}

TEST(TivLoss, PhaseGradientMatchesFiniteDifferences) {
  const auto& f = face();
  const ModelParams m = init_model(Architecture::PointMlp, 5, {}, 23);
  const AdvLossSetup s = loss_setup(m, f.cal);
  const PhaseMap& phi = f.clean.unwrapped.absolute;
  const std::uint64_t seed = 77;
  const AdvLossEval ev = tiv_adv_loss(phi, s, seed);
  double scale = 0.0;
  for (double g : ev.grad_phase) scale = std::max(scale, std::abs(g));
  ASSERT_GT(scale, 0.0);
  std::vector<std::size_t> pixels = ev.reconstruction.pixel_index;
  Rng rng(5);
  std::shuffle(pixels.begin(), pixels.end(), rng);
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    const std::size_t p = pixels[k];
    PhaseMap plus = phi, minus = phi;
    plus.values[p] += h;
    minus.values[p] -= h;
    const double numeric = (tiv_adv_loss(plus, s, seed).loss - tiv_adv_loss(minus, s, seed).loss) / (2 * h);
    expect_close_grad(ev.grad_phase[p], numeric, 1e-3, 1e-3 * scale);
  }
}

TEST(TivLoss, FrozenNormalizationGradientMatchesFiniteDifferences) {
  const auto& f = face();
  const ModelParams m = init_model(Architecture::PointMlp, 5, {}, 24);
  AdvLossSetup s = loss_setup(m, f.cal);
  s.tiv = false;
  s.samples = 1;
  const PointCloud& cloud = f.clean.reconstruction.cloud;
  const auto idx = farthest_point_indices(cloud.points, m.points, s.fps_seed);
  const Normalized n = renormalize(select_points(cloud, idx));
  s.frozen = true;
  s.frozen_centroid = n.centroid;
  s.frozen_scale = n.scale;
  for (std::size_t k : idx)
    s.frozen_pixels.push_back((static_cast<std::int64_t>(cloud.source_pixels[k][1]) << 32) | cloud.source_pixels[k][0]);
  const AdvLossEval ev = tiv_adv_loss_cloud(cloud, s, 3);
  double scale = 0.0;
  for (const Vec3& g : ev.grad_points) scale = std::max(scale, g.cwiseAbs().maxCoeff());
  ASSERT_GT(scale, 0.0);
  const double h = 1e-4;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = idx[(k * 37) % idx.size()];
    const int axis = k % 3;
    PointCloud plus = cloud, minus = cloud;
    plus.points[i][axis] += h;
    minus.points[i][axis] -= h;
    const double numeric = (tiv_adv_loss_cloud(plus, s, 3).loss - tiv_adv_loss_cloud(minus, s, 3).loss) / (2 * h);
    expect_close_grad(ev.grad_points[i][axis], numeric, 1e-4, 1e-3 * scale);
  }
}

TEST(TivLoss, DepthModelGradientMatchesFiniteDifferences) {
  const auto& f = face();
  const ModelParams m = init_model(Architecture::DepthConv, 5, {}, 25);
  const AdvLossSetup s = loss_setup(m, f.cal);
  const PointCloud& cloud = f.clean.reconstruction.cloud;
  const AdvLossEval ev = tiv_adv_loss_cloud(cloud, s, 9);
  double scale = 0.0;
  for (const Vec3& g : ev.grad_points) scale = std::max(scale, g.cwiseAbs().maxCoeff());
  ASSERT_GT(scale, 0.0);
  const double h = 1e-3;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = (k * 131) % cloud.size();
    const int axis = k % 3;
    PointCloud plus = cloud, minus = cloud;
    plus.points[i][axis] += h;
    minus.points[i][axis] -= h;
    const double numeric = (tiv_adv_loss_cloud(plus, s, 9).loss - tiv_adv_loss_cloud(minus, s, 9).loss) / (2 * h);
    expect_close_grad(ev.grad_points[i][axis], numeric, 1e-4, 1e-3 * scale);
  }
}

// ---------------------------------------------------------------------------

AttackResult fake(double lambda, bool success, double distance) {
  AttackResult r;
  r.lambda = lambda;
  r.success = success;
  r.surrogate_success = success;
  r.distance = success ? distance : std::numeric_limits<double>::infinity();
  return r;
}

TEST(LambdaSearch, MonotoneOracleBracketsThreshold) {
  AttackConfig cfg;
  for (double star : {3e-4, 0.7, 42.0, 9e3}) {
    const AttackResult r = lambda_search([&](double l) { return fake(l, l <= star, 1.0 / l); }, cfg);
    EXPECT_LE(r.lambda, star);
    // Ten halvings of ten decades leave an interval of 10/1024 decades.
    EXPECT_LE(star / r.lambda, std::pow(10.0, 10.0 / 1024.0) * (1 + 1e-12));
    EXPECT_EQ(r.search.size(), 10u);
  }
}

TEST(LambdaSearch, AlwaysFailingThrows) {
  AttackConfig cfg;
  try {
    lambda_search([](double l) { return fake(l, false, 0.0); }, cfg);
    FAIL() << "expected AllStepsFailed";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllStepsFailed);
  }
}

TEST(LambdaSearch, InverseDistanceReturnsHighestProbe) {
  AttackConfig cfg;
  std::vector<double> probed;
  const AttackResult r = lambda_search(
      [&](double l) {
        probed.push_back(l);
        return fake(l, true, 1.0 / l);
      },
      cfg);
  EXPECT_DOUBLE_EQ(r.lambda, *std::max_element(probed.begin(), probed.end()));
  EXPECT_TRUE(std::is_sorted(probed.begin(), probed.end()));
}

TEST(LambdaSearch, NonFiniteGradientFailsOnlyThatStep) {
  AttackConfig cfg;
  cfg.search_steps = 4;
  int calls = 0;
  const AttackResult r = lambda_search(
      [&](double l) {
        if (calls++ == 0) throw Error(ErrorCode::NonFiniteGradient, "nan");
        return fake(l, true, 1.0);
      },
      cfg);
  EXPECT_EQ(calls, 4);
  EXPECT_FALSE(r.search.front().success);
  EXPECT_LT(r.lambda, 1.0);
}

TEST(LambdaSearch, InvalidBoundsRejected) {
  AttackConfig cfg;
  cfg.lambda_min = 0.0;
  EXPECT_THROW(lambda_search([](double l) { return fake(l, true, 1.0); }, cfg), Error);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.label = 2;
  EXPECT_NO_THROW(c.validate(5));
  c.mode = AttackMode::Impersonate;
  c.target = 2;
  EXPECT_THROW(c.validate(5), Error);
  c.target = 7;
  EXPECT_THROW(c.validate(5), Error);
  c.target = 0;
  EXPECT_NO_THROW(c.validate(5));
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(5), Error);
}

// ---------------------------------------------------------------------------

struct PlaneShot {
  Calibration cal = make_desk_rig(RigParams{});
  SceneSurface plane = flat_plane(64, 64, 1560.0, 0.7);
  FringePatternSet patterns;
  SurrogateParams params;
  PlaneShot() {
    patterns = scanner_patterns(cal, ScanConfig{});
    params = make_surrogate(cal, 16, 1500.0, 64, 64);
  }
};

TEST(Surrogate, FlatPlaneMatchesMultiStep) {
  PlaneShot p;
  const CaptureRig rig(p.plane, p.cal, RenderOptions{});
  const Captures c = capture_scan(rig, p.patterns);
  const ScanResult full = decode_scan(c, p.cal, 16);
  const SurrogateOutput s = fringe_analysis_surrogate(c.shifts.front(), p.params);
  const int border = static_cast<int>(std::ceil(2 * p.params.rho + 3 * p.params.background_sigma));
  int checked = 0;
  for (int v = border; v < 64 - border; ++v)
    for (int u = border; u < 64 - border; ++u) {
      const std::size_t i = s.wrapped.index(u, v);
      if (!full.wrapped.mask[i]) continue;
      ASSERT_TRUE(s.wrapped.mask[i]);
      EXPECT_LT(std::abs(wrap(s.wrapped.values[i] - full.wrapped.values[i])), 0.05) << u << "," << v;
      ++checked;
    }
  EXPECT_GT(checked, 100);
}

TEST(Surrogate, ConstantImageFullyMasked) {
  PlaneShot p;
  const SurrogateOutput s = fringe_analysis_surrogate(Image(64, 64, 0.5), p.params);
  EXPECT_EQ(s.wrapped.valid_count(), 0u);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
  PlaneShot p;
  const CaptureRig rig(p.plane, p.cal, RenderOptions{});
  const Image img = rig.render(p.patterns.shift_patterns.front());
  const SurrogateOutput base = fringe_analysis_surrogate(img, p.params);
  Rng rng(8);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::vector<double> weights(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    if (base.wrapped.mask[i]) weights[i] = w(rng);
  auto loss = [&](const Image& x) {
    const SurrogateOutput o = fringe_analysis_surrogate(x, p.params);
    double l = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (base.wrapped.mask[i]) l += weights[i] * wrap(o.wrapped.values[i] - base.wrapped.values[i]);
    return l;
  };
  const Image g = surrogate_backward(base, p.params, weights);
  double scale = 0.0;
  for (double x : g.data) scale = std::max(scale, std::abs(x));
  std::uniform_int_distribution<int> pick(8, 55);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = img.index(pick(rng), pick(rng));
    Image plus = img, minus = img;
    plus[i] += h;
    minus[i] -= h;
    expect_close_grad(g[i], (loss(plus) - loss(minus)) / (2 * h), 1e-4, 1e-4 * scale);
  }
}

TEST(Surrogate, ZeroIlluminationEqualsCleanPipeline) {
  const auto& f = face();
  // Linear attacker: the tanh response emits light at x = 0.
  const CaptureRig rig(f.scene, f.cal, RenderOptions{});
  const auto patterns = scanner_patterns(f.cal, ScanConfig{});
  const SurrogateParams sp = make_surrogate(f.cal, 16, 1500.0, 64, 64);
  const Image zero(rig.extra_width(), rig.extra_height());
  const SingleShotScan a = single_shot_scan(rig, patterns, sp, nullptr);
  const SingleShotScan b = single_shot_scan(rig, patterns, sp, &zero);
  ASSERT_EQ(a.reconstruction.cloud.size(), b.reconstruction.cloud.size());
  EXPECT_DOUBLE_EQ(rmse_aligned(b.reconstruction.cloud, a.reconstruction.cloud).rmse, 0.0);
}

// ---------------------------------------------------------------------------

PointCloud grid_cloud(int n) {
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    c.points.push_back(Vec3(i % 7, (i / 7) % 5, i * 0.1));
    c.source_pixels.push_back({i, 0});
  }
  return c;
}

TEST(Rmse, IdenticalCloudsGiveZero) {
  const PointCloud c = grid_cloud(30);
  EXPECT_DOUBLE_EQ(rmse_aligned(c, c).rmse, 0.0);
}

TEST(Rmse, UniformDisplacementGivesDOverN) {
  const PointCloud c = grid_cloud(30);
  PointCloud d = c;
  for (Vec3& p : d.points) p.z() += 0.25;
  const double scale = renormalize(c).scale;
  const RmseResult r = rmse_aligned(d, c);
  EXPECT_NEAR(r.rmse, 0.25 / scale / 30.0, 1e-15);
  EXPECT_NEAR(r.mean_distance, 0.25 / scale, 1e-15);
  EXPECT_EQ(r.matched, 30u);
}

TEST(Rmse, RandomFieldMatchesSummation) {
  const PointCloud c = grid_cloud(50);
  PointCloud d = c;
  Rng rng(3);
  std::normal_distribution<double> g(0.0, 0.3);
  for (Vec3& p : d.points) p += Vec3(g(rng), g(rng), g(rng));
  // Drop a few matches and shuffle the adversarial order.
  d.points.resize(45);
  d.source_pixels.resize(45);
  std::vector<std::size_t> perm(45);
  for (std::size_t i = 0; i < 45; ++i) perm[i] = 44 - i;
  const PointCloud shuffled = select_points(d, perm);
  const double scale = renormalize(c).scale;
  double sum = 0.0;
  for (int i = 0; i < 45; ++i) sum += (d.points[i] - c.points[i]).norm() / scale;
  EXPECT_NEAR(rmse_aligned(shuffled, c).rmse, sum / (45.0 * 45.0), 1e-12);
  const RmseResult batch = rmse_aligned(std::vector<PointCloud>{shuffled, c}, std::vector<PointCloud>{c, c});
  EXPECT_NEAR(batch.rmse, sum / (45.0 * 45.0) / 2.0, 1e-12);
}

TEST(Rmse, NoOverlapThrows) {
  PointCloud a = grid_cloud(5), b = grid_cloud(5);
  for (auto& px : b.source_pixels) px[1] = 9;
  try {
    rmse_aligned(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoOverlap);
  }
}

// ---------------------------------------------------------------------------

struct SmokeAttack {
  const FaceFixture& f = face();
  ModelParams model = init_model(Architecture::PointMlp, 4, {}, 31);
  AttackScene scene;
  AttackConfig cfg;
  SmokeAttack() {
    scene.scene = &f.scene;
    scene.calibration = &f.cal;
    const Logits z = classify_cloud(model, f.clean.reconstruction.cloud, verification_fps_seed(cfg), f.cal, 64, 64);
    cfg.label = argmax(z);
    cfg.iterations = 12;
    cfg.search_steps = 3;
    cfg.seed = 4;
  }
};

void expect_on_pixel_rays(const PointCloud& cloud, const Calibration& cal) {
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    const Ray r = back_project(cal.camera, cloud.source_pixels[k][0], cloud.source_pixels[k][1]);
    const Vec3 d = (cloud.points[k] - r.origin).normalized();
    EXPECT_LT(std::acos(std::clamp(d.dot(r.direction), -1.0, 1.0)), 1e-6);
  }
}

TEST(PhaseShifting, SmokeRespectsClipAndDirection) {
  SmokeAttack s;
  const AttackResult r = phase_shifting_attack(s.scene, s.model, s.cfg);
  ASSERT_TRUE(r.patterns.has_value());
  EXPECT_EQ(r.success, criterion_met(r.logits, s.cfg.loss_target(), s.cfg.mode));
  EXPECT_LT(r.max_column_shift, 1600.0 / 16.0);
  for (std::size_t i = 0; i < r.clean_phase.size(); ++i)
    if (r.clean_phase.mask[i]) EXPECT_LE(std::abs(r.adversarial_phase.values[i] - r.clean_phase.values[i]), 2 * kPi);
  expect_on_pixel_rays(r.adversarial_cloud, s.f.cal);
  EXPECT_EQ(r.search.size(), 3u);
  EXPECT_FALSE(r.trace.empty());
  // Re-verifying the returned patterns reproduces the logits.
  const Verification v = verify_patterns(s.scene, s.model, *r.patterns, s.cfg);
  EXPECT_LT((v.logits - r.logits).norm(), 1e-9);
  EXPECT_EQ(v.success, r.success);
}

TEST(PhaseShifting, AlreadyMisclassifiedReturnsImmediately) {
  SmokeAttack s;
  s.cfg.label = (s.cfg.label + 1) % 4;
  const AttackResult r = phase_shifting_attack(s.scene, s.model, s.cfg);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.iterations_run, 0);
  EXPECT_DOUBLE_EQ(r.l1, 0.0);
  EXPECT_TRUE(r.search.empty());
}

TEST(PhaseShifting, ZeroIterationsReportsNaturalOutcome) {
  SmokeAttack s;
  s.cfg.iterations = 0;
  const AttackResult r = phase_shifting_attack(s.scene, s.model, s.cfg);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.note, "AttackFailed");
}

TEST(PhaseShifting, FixedLambdaIsDeterministic) {
  SmokeAttack s;
  const AttackResult a = phase_shifting_at_lambda(s.scene, s.model, s.cfg, 0.1);
  const AttackResult b = phase_shifting_at_lambda(s.scene, s.model, s.cfg, 0.1);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].total, b.trace[i].total);
  EXPECT_EQ(a.adversarial_phase.values, b.adversarial_phase.values);
}

TEST(PhaseShifting, AblationsStayRealizable) {
  SmokeAttack s;
  s.cfg.direction_constraint = false;
  s.cfg.renormalize_in_loop = false;
  s.cfg.tiv = false;
  const AttackResult naive = phase_shifting_at_lambda(s.scene, s.model, s.cfg, 0.1);
  EXPECT_LT(naive.max_column_shift, 100.0);
  expect_on_pixel_rays(naive.adversarial_cloud, s.f.cal);
  s.cfg = SmokeAttack().cfg;
  s.cfg.distance = DistanceKind::L2;
  const AttackResult l2 = phase_shifting_at_lambda(s.scene, s.model, s.cfg, 0.1);
  EXPECT_LT(l2.max_column_shift, 100.0);
  ASSERT_FALSE(l2.trace.empty());
  EXPECT_GE(l2.trace.back().distance, 0.0);
}

TEST(PhaseSuperposition, IlluminationStaysInUnitRange) {
  SmokeAttack s;
  s.scene.world.gamma = GammaModel{2.5};
  s.cfg.assumed_gamma = 2.5;
  s.cfg.iterations = 8;
  const AttackResult r = phase_superposition_at_lambda(s.scene, s.model, s.cfg, 1e-3);
  ASSERT_TRUE(r.illumination.has_value());
  for (double x : r.illumination->data) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  EXPECT_EQ(r.success, criterion_met(r.logits, s.cfg.loss_target(), s.cfg.mode));
  EXPECT_EQ(r.iterations_run, 8);
  const Verification v = verify_illumination(s.scene, s.model, *r.illumination, s.cfg);
  EXPECT_LT((v.logits - r.logits).norm(), 1e-9);
  EXPECT_EQ(v.success, r.success);
}

}  // namespace
}  // namespace fringeforge
