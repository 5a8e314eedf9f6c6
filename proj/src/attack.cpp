// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/attack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

namespace fringeforge {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * kPi;

double wrap_pi(double x) { return x - kTwoPi * std::round(x / kTwoPi); }

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

std::uint64_t lambda_stream(double lambda) { return std::bit_cast<std::uint64_t>(lambda); }

LossFn margin_loss(int target, AttackMode mode, double kappa) {
  return [=](const Logits& z, Logits& g) {
    LossValue v = logits_loss(z, target, mode, kappa);
    g = v.grad;
    return v.value;
  };
}

std::int64_t pixel_key(int u, int v) { return (static_cast<std::int64_t>(v) << 32) | static_cast<std::uint32_t>(u); }

// Separable zero-padded Gaussian; symmetric, so it is its own adjoint.
Image gaussian_blur(const Image& in, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int j = -r; j <= r; ++j) sum += k[j + r] = std::exp(-0.5 * j * j / (sigma * sigma));
  for (double& x : k) x /= sum;
  const int w = in.width, h = in.height;
  Image tmp(w, h), out(w, h);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int j = std::max(-r, -u); j <= std::min(r, w - 1 - u); ++j) acc += k[j + r] * in.at(u + j, v);
      tmp.at(u, v) = acc;
    }
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int j = std::max(-r, -v); j <= std::min(r, h - 1 - v); ++j) acc += k[j + r] * tmp.at(u, v + j);
      out.at(u, v) = acc;
    }
  return out;
}

double distance_value(DistanceKind kind, double delta, double weight) {
  return kind == DistanceKind::SensitivityL1 ? weight * std::abs(delta) : delta * delta;
}

double distance_grad(DistanceKind kind, double delta, double weight) {
  return kind == DistanceKind::SensitivityL1 ? weight * sign(delta) : 2.0 * delta;
}

// Shared state of one phase shifting instance across lambda steps.
struct ShiftContext {
  const AttackScene* scene;
  const ModelParams* model;
  AttackConfig cfg;
  CaptureRig rig;
  FringePatternSet base;
  ScanResult clean;
  PhaseMap phi0;
  ProjectorCorrespondence corr;
  SensitivityMap sens;
  AdvLossSetup setup;
  Vec3 view_dir;
  Logits clean_logits;
  std::vector<double> ray_rate;  // |dP/dphi| per point of the clean cloud (mm/rad)

  ShiftContext(const AttackScene& s, const ModelParams& m, const AttackConfig& c)
      : scene(&s), model(&m), cfg(c), rig(*s.scene, *s.calibration, s.world) {
    base = scanner_patterns(*s.calibration, s.scan);
    clean = run_scan(rig, base, s.scan);
    phi0 = clean.unwrapped.absolute;
    corr = rig.correspondence();
    const auto [u0, v0] = face_center(phi0);
    const double w_s = cfg.sensitivity_width > 0.0 ? cfg.sensitivity_width : phi0.width / 4.0;
    sens = sensitivity_map(phi0, u0, v0, w_s, cfg.sensitivity_radius);
    setup.model = &m;
    setup.calibration = s.calibration;
    setup.mode = cfg.mode;
    setup.target = cfg.loss_target();
    setup.kappa = cfg.kappa;
    setup.samples = cfg.tiv ? cfg.transform_samples : 1;
    setup.tiv = cfg.tiv;
    setup.transforms = cfg.transforms;
    setup.fps_seed = verification_fps_seed(cfg);
    const PointCloud& cloud = clean.reconstruction.cloud;
    if (!cfg.renormalize_in_loop && m.architecture == Architecture::PointMlp) {
      setup.frozen = true;
      std::vector<std::size_t> idx(cloud.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      if (cloud.size() > m.points) idx = farthest_point_indices(cloud.points, m.points, setup.fps_seed);
      const Normalized n = renormalize(select_points(cloud, idx));
      setup.frozen_centroid = n.centroid;
      setup.frozen_scale = n.scale;
      for (std::size_t k : idx) setup.frozen_pixels.push_back(pixel_key(cloud.source_pixels[k][0], cloud.source_pixels[k][1]));
    }
    view_dir = view_ray_direction(s.calibration->camera);
    clean_logits = classify_cloud(m, cloud, setup.fps_seed, *s.calibration, phi0.width, phi0.height);
    for (const Vec3& d : clean.reconstruction.d_point_d_phase) ray_rate.push_back(d.norm());
  }
};

RmseResult safe_rmse(const PointCloud& adv, const PointCloud& clean) {
  try {
    return rmse_aligned(adv, clean);
  } catch (const Error&) {
    return {};
  }
}

int count_order_changes(const Grid<int>& a, const PhaseMap& am, const Grid<int>& b, const PhaseMap& bm) {
  int changes = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (am.mask[i] && bm.mask[i] && a[i] != b[i]) ++changes;
  return changes;
}

// Encode, re-simulate, and fill the verification fields of r.
void realize_phase(const ShiftContext& ctx, const PhaseMap& phi, AttackResult& r) {
  const EncodeResult enc = encode_adversarial_patterns(phi, ctx.base, ctx.corr);
  const ScanResult scan = run_scan(ctx.rig, enc.patterns, ctx.scene->scan);
  r.adversarial_cloud = scan.reconstruction.cloud;
  r.logits = classify_cloud(*ctx.model, r.adversarial_cloud, ctx.setup.fps_seed, *ctx.scene->calibration,
                            phi.width, phi.height);
  r.success = criterion_met(r.logits, ctx.cfg.loss_target(), ctx.cfg.mode);
  r.patterns = enc.patterns;
  r.conflicts = enc.conflicts;
  r.max_column_shift = enc.max_column_shift;
  r.order_changes = count_order_changes(scan.unwrapped.order, scan.unwrapped.absolute, ctx.clean.unwrapped.order,
                                        ctx.clean.unwrapped.absolute);
  const RmseResult e = safe_rmse(r.adversarial_cloud, r.clean_cloud);
  r.rmse = e.rmse;
  r.mean_distance = e.mean_distance;
  r.adversarial_phase = phi;
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!ctx.phi0.mask[i]) continue;
    const double d = phi.values[i] - ctx.phi0.values[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  r.l1 = l1;
  r.l2 = std::sqrt(l2);
}

AttackResult base_result(const ShiftContext& ctx, double lambda) {
  AttackResult r;
  r.mode = ctx.cfg.mode;
  r.label = ctx.cfg.label;
  r.target = ctx.cfg.loss_target();
  r.lambda = lambda;
  r.clean_phase = ctx.phi0;
  r.clean_cloud = ctx.clean.reconstruction.cloud;
  r.clean_logits = ctx.clean_logits;
  return r;
}

void check_finite(const std::vector<double>& g) {
  for (double x : g)
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
}

// clip_phase, then keep the encoded column within half a column of one period
// from the pixel's projector column, so the rounded shift stays strictly inside.
PhaseMap clip_encodable(const PhaseMap& phi, const PhaseMap& phi0, const ProjectorCorrespondence& corr,
                        int projector_width) {
  PhaseMap out = clip_phase(phi, phi0);
  const double period = static_cast<double>(projector_width) / phi0.fringe_count;
  const double reach = period - 0.5 - 1e-6;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!phi0.mask[i] || !corr.valid[i]) continue;
    const double lo = column_to_phase(corr.u_p[i] - reach, projector_width, phi0.fringe_count);
    const double hi = column_to_phase(corr.u_p[i] + reach, projector_width, phi0.fringe_count);
    out.values[i] = std::clamp(out.values[i], lo, hi);
  }
  return out;
}

bool accepted(const AttackConfig& cfg, double adv_loss) {
  return adv_loss <= -cfg.kappa || adv_loss < -cfg.accept_margin;
}

struct Plateau {
  int interval = 0;
  double last = std::numeric_limits<double>::infinity();
  bool stop(int it, double total) {
    if (interval <= 0 || (it + 1) % interval != 0) return false;
    const bool flat = total > last - 1e-4 * std::abs(last);
    last = total;
    return flat;
  }
};

// Phase parameterization with the view-direction constraint.
AttackResult run_phase(const ShiftContext& ctx, double lambda) {
  const AttackConfig& cfg = ctx.cfg;
  AttackResult r = base_result(ctx, lambda);
  const double unit = kTwoPi * ctx.phi0.fringe_count;
  Rng rng(derive_seed(cfg.seed, lambda_stream(lambda)));
  std::uniform_real_distribution<double> init(-cfg.init_noise, cfg.init_noise);
  PhaseMap phi = ctx.phi0;
  for (std::size_t i = 0; i < phi.size(); ++i)
    if (phi.mask[i]) phi.values[i] += init(rng) * unit;
  phi = clip_encodable(phi, ctx.phi0, ctx.corr, ctx.scene->calibration->projector_width);

  std::optional<PhaseMap> best;
  double best_distance = std::numeric_limits<double>::infinity();
  double best_margin = 0.0;
  Plateau plateau{cfg.abort_checks > 0 ? std::max(1, cfg.iterations / cfg.abort_checks) : 0};
  std::vector<double> grad(phi.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    const AdvLossEval ev = tiv_adv_loss(phi, ctx.setup, derive_seed(derive_seed(cfg.seed, lambda_stream(lambda)), it));
    std::fill(grad.begin(), grad.end(), 0.0);
    const auto constrained = cfg.direction_constraint ? constrain_gradient(ev.grad_points, ctx.view_dir) : ev.grad_points;
    const Reconstruction& rec = ev.reconstruction;
    for (std::size_t k = 0; k < rec.cloud.size(); ++k) grad[rec.pixel_index[k]] = constrained[k].dot(rec.d_point_d_phase[k]);
    double distance = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (!ctx.phi0.mask[i]) continue;
      const double d = phi.values[i] - ctx.phi0.values[i];
      distance += distance_value(cfg.distance, d, ctx.sens.weights[i]);
      grad[i] += lambda * distance_grad(cfg.distance, d, ctx.sens.weights[i]);
    }
    check_finite(grad);
    const double total = ev.loss + lambda * distance;
    r.trace.push_back({lambda, it, ev.loss, distance, total, ev.loss});
    r.iterations_run = it + 1;
    if (accepted(cfg, ev.loss) && distance < best_distance) {
      best = phi;
      best_distance = distance;
      best_margin = ev.loss;
    }
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (std::size_t i = 0; i < phi.size(); ++i)
      if (phi.mask[i]) phi.values[i] -= cfg.alpha * unit * grad[i] / norm;
    phi = clip_encodable(phi, ctx.phi0, ctx.corr, ctx.scene->calibration->projector_width);
    if (plateau.stop(it, total)) break;
  }
  r.surrogate_success = best.has_value();
  if (best) {
    r.distance = best_distance;
    r.final_margin = best_margin;
    realize_phase(ctx, *best, r);
  } else {
    // No surrogate candidate: the last iterate still gets verified.
    r.distance = r.trace.empty() ? std::numeric_limits<double>::infinity() : r.trace.back().distance;
    r.final_margin = r.trace.empty() ? 0.0 : r.trace.back().margin;
    realize_phase(ctx, phi, r);
  }
  return r;
}

// Free 3D offsets per point (no direction constraint), realized afterwards by
// projecting each adversarial point into the projector.
AttackResult run_free_points(const ShiftContext& ctx, double lambda) {
  const AttackConfig& cfg = ctx.cfg;
  AttackResult r = base_result(ctx, lambda);
  const PointCloud& clean = ctx.clean.reconstruction.cloud;
  const auto& pixel = ctx.clean.reconstruction.pixel_index;
  const std::size_t n = clean.size();
  const double unit = kTwoPi * ctx.phi0.fringe_count;
  Rng rng(derive_seed(cfg.seed, lambda_stream(lambda)));
  std::uniform_real_distribution<double> init(-cfg.init_noise, cfg.init_noise);
  // eta is in phase-equivalent radians: P = P0 + rate * eta.
  std::vector<Vec3> eta(n);
  for (auto& e : eta) e = Vec3(init(rng), init(rng), init(rng)) * unit;
  auto clip = [&](Vec3& e) {
    const double norm = e.norm();
    if (norm > kTwoPi) e *= kTwoPi / norm;
  };
  auto cloud_of = [&](const std::vector<Vec3>& e) {
    PointCloud c = clean;
    for (std::size_t k = 0; k < n; ++k) c.points[k] += ctx.ray_rate[k] * e[k];
    return c;
  };
  std::optional<std::vector<Vec3>> best;
  double best_distance = std::numeric_limits<double>::infinity();
  double best_margin = 0.0;
  Plateau plateau{cfg.abort_checks > 0 ? std::max(1, cfg.iterations / cfg.abort_checks) : 0};
  std::vector<Vec3> grad(n);
  for (int it = 0; it < cfg.iterations; ++it) {
    const AdvLossEval ev =
        tiv_adv_loss_cloud(cloud_of(eta), ctx.setup, derive_seed(derive_seed(cfg.seed, lambda_stream(lambda)), it));
    double distance = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = ctx.sens.weights[pixel[k]];
      grad[k] = ctx.ray_rate[k] * ev.grad_points[k];
      for (int a = 0; a < 3; ++a) {
        distance += distance_value(cfg.distance, eta[k][a], w);
        grad[k][a] += lambda * distance_grad(cfg.distance, eta[k][a], w);
      }
      norm += grad[k].squaredNorm();
    }
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
    const double total = ev.loss + lambda * distance;
    r.trace.push_back({lambda, it, ev.loss, distance, total, ev.loss});
    r.iterations_run = it + 1;
    if (accepted(cfg, ev.loss) && distance < best_distance) {
      best = eta;
      best_distance = distance;
      best_margin = ev.loss;
    }
    if (norm == 0.0) break;
    for (std::size_t k = 0; k < n; ++k) {
      eta[k] -= cfg.alpha * unit * grad[k] / norm;
      clip(eta[k]);
    }
    if (plateau.stop(it, total)) break;
  }
  // Realize: the projector column that lights each adversarial point.
  const std::vector<Vec3>& chosen = best ? *best : eta;
  const PointCloud adv = cloud_of(chosen);
  const Calibration& cal = *ctx.scene->calibration;
  PhaseMap phi = ctx.phi0;
  for (std::size_t k = 0; k < n; ++k) {
    try {
      const PixelProjection p = project_point(cal.projector, adv.points[k]);
      phi.values[pixel[k]] = column_to_phase(p.u, cal.projector_width, phi.fringe_count);
    } catch (const Error&) {
    }
  }
  phi = clip_encodable(phi, ctx.phi0, ctx.corr, ctx.scene->calibration->projector_width);
  r.surrogate_success = best.has_value();
  r.distance = best ? best_distance : (r.trace.empty() ? std::numeric_limits<double>::infinity() : r.trace.back().distance);
  r.final_margin = best ? best_margin : (r.trace.empty() ? 0.0 : r.trace.back().margin);
  realize_phase(ctx, phi, r);
  return r;
}

AttackResult run_shift(const ShiftContext& ctx, double lambda) {
  return ctx.cfg.direction_constraint ? run_phase(ctx, lambda) : run_free_points(ctx, lambda);
}

struct SearchOutcome {
  std::optional<AttackResult> best;
  std::optional<AttackResult> fallback;  // lowest-lambda failure
  std::vector<LambdaStep> steps;
  std::vector<TraceRow> trace;
};

SearchOutcome search(const LambdaAttack& attack, const AttackConfig& cfg) {
  if (!(cfg.lambda_min > 0.0) || !(cfg.lambda_max > cfg.lambda_min) || cfg.search_steps < 1) {
    throw Error(ErrorCode::InvalidConfig, "lambda search bounds");
  }
  SearchOutcome out;
  double lo = std::log10(cfg.lambda_min), hi = std::log10(cfg.lambda_max);
  for (int step = 0; step < cfg.search_steps; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double lambda = std::pow(10.0, mid);
    std::optional<AttackResult> r;
    try {
      r = attack(lambda);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteGradient) throw;
    }
    LambdaStep s{lambda, r && r->surrogate_success, r && r->success, r ? r->distance : 0.0};
    out.steps.push_back(s);
    if (r) out.trace.insert(out.trace.end(), r->trace.begin(), r->trace.end());
    if (r && r->success) {
      if (!out.best || r->distance < out.best->distance) out.best = std::move(*r);
      lo = mid;
    } else {
      if (r && (!out.fallback || lambda < out.fallback->lambda)) out.fallback = std::move(*r);
      hi = mid;
    }
  }
  return out;
}

AttackResult finish(SearchOutcome out, AttackResult immediate_template) {
  AttackResult r;
  if (out.best) {
    r = std::move(*out.best);
  } else if (out.fallback) {
    r = std::move(*out.fallback);
    r.success = false;
    r.note = "AttackFailed";
  } else {
    r = std::move(immediate_template);
    r.success = false;
    r.note = "AttackFailed";
  }
  r.search = std::move(out.steps);
  r.trace = std::move(out.trace);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

void AttackConfig::validate(int classes) const {
  if (!(lambda_min > 0.0) || !(lambda_max > lambda_min)) throw Error(ErrorCode::InvalidConfig, "lambda bounds");
  if (search_steps < 1) throw Error(ErrorCode::InvalidConfig, "search_steps must be >= 1");
  if (iterations < 0) throw Error(ErrorCode::InvalidConfig, "iterations must be >= 0");
  if (!(alpha > 0.0) || !(alpha_illumination > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
  if (transform_samples < 1) throw Error(ErrorCode::InvalidConfig, "transform_samples must be >= 1");
  if (kappa < 0.0 || init_noise < 0.0) throw Error(ErrorCode::InvalidConfig, "kappa and init_noise must be >= 0");
  if (label < 0 || label >= classes) throw Error(ErrorCode::InvalidConfig, "label out of range");
  if (mode == AttackMode::Impersonate && (target < 0 || target >= classes || target == label)) {
    throw Error(ErrorCode::InvalidConfig, "impersonation target must be a valid class other than the label");
  }
}

std::uint64_t verification_fps_seed(const AttackConfig& config) { return derive_seed(config.seed, 0xf95); }

std::pair<double, double> face_center(const PhaseMap& a) {
  double su = 0.0, sv = 0.0, n = 0.0;
  for (int v = 0; v < a.height; ++v)
    for (int u = 0; u < a.width; ++u)
      if (a.mask[a.index(u, v)]) {
        su += u;
        sv += v;
        n += 1.0;
      }
  if (n == 0.0) return {(a.width - 1) / 2.0, (a.height - 1) / 2.0};
  return {su / n, sv / n};
}

SensitivityMap sensitivity_map(const PhaseMap& a, double u0, double v0, double w_s, int radius) {
  if (!(w_s > 0.0) || radius < 0) throw Error(ErrorCode::InvalidConfig, "sensitivity width and radius");
  SensitivityMap s;
  s.width = a.width;
  s.height = a.height;
  s.u0 = u0;
  s.v0 = v0;
  s.w_s = w_s;
  s.radius = radius;
  s.sen1 = Image(a.width, a.height);
  s.sen2 = Image(a.width, a.height);
  s.weights = Image(a.width, a.height);
  for (int v = 0; v < a.height; ++v)
    for (int u = 0; u < a.width; ++u) {
      const double d = std::hypot(u - u0, v - v0);
      int count = 0;
      for (int dv = -radius; dv <= radius; ++dv)
        for (int du = -radius; du <= radius; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu >= 0 && vv >= 0 && uu < a.width && vv < a.height && a.mask[a.index(uu, vv)]) ++count;
        }
      s.sen1.at(u, v) = std::exp(-d / w_s);
      s.sen2.at(u, v) = 1.0 / std::max(1, count);
      s.weights.at(u, v) = s.sen1.at(u, v) + s.sen2.at(u, v);
    }
  return s;
}

Logits classify_cloud(const ModelParams& model, const PointCloud& cloud, std::uint64_t fps_seed,
                      const Calibration& calibration, int, int) {
  if (model.architecture == Architecture::PointMlp) return classify(model, preprocess_cloud(model, cloud, fps_seed).cloud);
  return classify(model, cloud_to_depth(cloud, calibration.camera, model.input_size, model.input_size));
}

AdvLossEval tiv_adv_loss_cloud(const PointCloud& cloud, const AdvLossSetup& s, std::uint64_t seed) {
  if (!s.model || !s.calibration) throw Error(ErrorCode::InvalidConfig, "loss setup lacks model or calibration");
  if (s.samples < 1) throw Error(ErrorCode::InvalidConfig, "sample count must be >= 1");
  const ModelParams& m = *s.model;
  const std::size_t n = cloud.size();
  if (n == 0) throw Error(ErrorCode::DegenerateCloud, "empty cloud");
  AdvLossEval ev;
  ev.grad_points.assign(n, Vec3::Zero());
  const LossFn loss = margin_loss(s.target, s.mode, s.kappa);
  const double radius = cloud_radius(cloud);
  const double inv = 1.0 / s.samples;

  if (m.architecture == Architecture::DepthConv) {
    const Mat3& cam_r = s.calibration->camera.R;
    for (int k = 0; k < s.samples; ++k) {
      const RigidTransform t = s.tiv ? sample_transform(s.transforms, radius, derive_seed(seed, k)) : RigidTransform{};
      const PointCloud moved = apply_transform(cloud, t);
      const DepthImage depth = cloud_to_depth(moved, s.calibration->camera, m.input_size, m.input_size);
      const DepthGradient g = classify_gradient(m, depth, loss);
      ev.loss += inv * g.loss;
      if (k == 0) ev.logits = g.logits;
      for (std::size_t i = 0; i < n; ++i) {
        const auto [u, v] = moved.source_pixels[i];
        if (u < 0 || v < 0 || u >= m.input_size || v >= m.input_size || !depth.mask.at(u, v)) continue;
        const Vec3 dq = cam_r.row(2).transpose() * g.grad.at(u, v);
        ev.grad_points[i] += inv * (t.rotation.transpose() * dq);
      }
    }
    return ev;
  }

  std::vector<std::size_t> idx;
  if (s.frozen) {
    std::unordered_map<std::int64_t, std::size_t> where;
    for (std::size_t i = 0; i < n; ++i) where[pixel_key(cloud.source_pixels[i][0], cloud.source_pixels[i][1])] = i;
    for (std::int64_t key : s.frozen_pixels) {
      const auto it = where.find(key);
      if (it != where.end()) idx.push_back(it->second);
    }
    if (idx.empty()) throw Error(ErrorCode::DegenerateCloud, "frozen selection missing from cloud");
  } else if (n > m.points) {
    idx = farthest_point_indices(cloud.points, m.points, s.fps_seed);
  } else {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  }
  const PointCloud sub = select_points(cloud, idx);
  for (int k = 0; k < s.samples; ++k) {
    const RigidTransform t = s.tiv ? sample_transform(s.transforms, radius, derive_seed(seed, k)) : RigidTransform{};
    const PointCloud moved = apply_transform(sub, t);
    std::vector<Vec3> gq;
    PointGradient g;
    if (s.frozen) {
      g = classify_gradient(m, apply_normalization(moved, s.frozen_centroid, s.frozen_scale), loss);
      gq.resize(g.grad.size());
      for (std::size_t i = 0; i < gq.size(); ++i) gq[i] = g.grad[i] / s.frozen_scale;
    } else {
      const Normalized nrm = renormalize(moved);
      g = classify_gradient(m, nrm.cloud, loss);
      gq = renormalize_backward(nrm, g.grad);
    }
    ev.loss += inv * g.loss;
    if (k == 0) ev.logits = g.logits;
    for (std::size_t j = 0; j < idx.size(); ++j) ev.grad_points[idx[j]] += inv * (t.rotation.transpose() * gq[j]);
  }
  return ev;
}

AdvLossEval tiv_adv_loss(const PhaseMap& absolute, const AdvLossSetup& s, std::uint64_t seed) {
  if (!s.calibration) throw Error(ErrorCode::InvalidConfig, "loss setup lacks calibration");
  Reconstruction rec = reconstruct_cloud(absolute, *s.calibration);
  AdvLossEval ev = tiv_adv_loss_cloud(rec.cloud, s, seed);
  ev.grad_phase.assign(absolute.size(), 0.0);
  for (std::size_t k = 0; k < rec.cloud.size(); ++k) {
    ev.grad_phase[rec.pixel_index[k]] = ev.grad_points[k].dot(rec.d_point_d_phase[k]);
  }
  ev.reconstruction = std::move(rec);
  return ev;
}

AttackResult lambda_search(const LambdaAttack& attack, const AttackConfig& config) {
  SearchOutcome out = search(attack, config);
  if (!out.best) throw Error(ErrorCode::AllStepsFailed, "no lambda step succeeded");
  AttackResult r = std::move(*out.best);
  r.search = std::move(out.steps);
  r.trace = std::move(out.trace);
  return r;
}

Verification verify_patterns(const AttackScene& scene, const ModelParams& model, const FringePatternSet& patterns,
                             const AttackConfig& config, const std::optional<RigidTransform>& test_transform) {
  const CaptureRig rig(*scene.scene, *scene.calibration, scene.world);
  const ScanResult scan = run_scan(rig, patterns, scene.scan);
  Verification v;
  v.cloud = scan.reconstruction.cloud;
  v.absolute = scan.unwrapped.absolute;
  v.order = scan.unwrapped.order;
  const PointCloud seen = test_transform ? apply_transform(v.cloud, *test_transform) : v.cloud;
  v.logits = classify_cloud(model, seen, verification_fps_seed(config), *scene.calibration, v.absolute.width,
                            v.absolute.height);
  v.success = criterion_met(v.logits, config.loss_target(), config.mode);
  return v;
}

AttackResult phase_shifting_at_lambda(const AttackScene& scene, const ModelParams& model, const AttackConfig& config,
                                      double lambda) {
  config.validate(model.classes);
  const ShiftContext ctx(scene, model, config);
  return run_shift(ctx, lambda);
}

AttackResult phase_shifting_attack(const AttackScene& scene, const ModelParams& model, const AttackConfig& config) {
  config.validate(model.classes);
  const ShiftContext ctx(scene, model, config);
  AttackResult immediate = base_result(ctx, 0.0);
  immediate.adversarial_phase = ctx.phi0;
  immediate.adversarial_cloud = ctx.clean.reconstruction.cloud;
  immediate.patterns = ctx.base;
  immediate.logits = ctx.clean_logits;
  immediate.final_margin = logits_loss(ctx.clean_logits, config.loss_target(), config.mode, config.kappa).value;
  if (config.iterations == 0 || criterion_met(ctx.clean_logits, config.loss_target(), config.mode)) {
    immediate.success = criterion_met(ctx.clean_logits, config.loss_target(), config.mode);
    immediate.surrogate_success = immediate.success;
    immediate.note = immediate.success ? "clean input already meets the criterion" : "AttackFailed";
    return immediate;
  }
  return finish(search([&](double lambda) { return run_shift(ctx, lambda); }, config), std::move(immediate));
}

// ---------------------------------------------------------------------------
// Single-shot surrogate.

SurrogateParams make_surrogate(const Calibration& cal, int fringe_count, double reference_depth, int width,
                               int height) {
  SurrogateParams p;
  p.fringe_count = fringe_count;
  p.projector_width = cal.projector_width;
  p.carrier = Image(width, height);
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const Ray ray = back_project(cal.camera, u, v);
      const double t = (reference_depth - ray.origin.z()) / ray.direction.z();
      const PixelProjection q = project_point(cal.projector, ray.origin + t * ray.direction);
      p.carrier.at(u, v) = column_to_phase(q.u, cal.projector_width, fringe_count);
    }
  return p;
}

SurrogateOutput fringe_analysis_surrogate(const Image& image, const SurrogateParams& p) {
  if (!image.same_shape(p.carrier)) throw Error(ErrorCode::ShapeMismatch, "surrogate image and carrier differ");
  const int w = image.width, h = image.height;
  SurrogateOutput o;
  o.region = Mask(w, h, 0);
  Image m(w, h), mi(w, h);
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image[i] > p.intensity_floor) {
      o.region[i] = 1;
      m[i] = 1.0;
      mi[i] = image[i];
    }
  o.smoothed_region = gaussian_blur(m, p.background_sigma);
  const Image lmi = gaussian_blur(mi, p.background_sigma);
  Image jc(w, h), js(w, h);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!o.region[i]) continue;
    const double background = lmi[i] / o.smoothed_region[i];
    const double residual = image[i] - background;
    jc[i] = residual * std::cos(p.carrier[i]);
    js[i] = residual * std::sin(p.carrier[i]);
  }
  o.mc = gaussian_blur(jc, p.rho);
  o.ms = gaussian_blur(js, p.rho);
  o.wrapped = PhaseMap(w, h, PhaseKind::Wrapped, p.fringe_count);
  o.wrapped.modulation.assign(image.size(), 0.0);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double mod = 2.0 * std::hypot(o.mc[i], o.ms[i]);
    o.wrapped.modulation[i] = mod;
    if (!o.region[i] || mod < p.modulation_threshold) continue;
    o.wrapped.values[i] = wrap_pi(p.carrier[i] + std::atan2(-o.ms[i], o.mc[i]));
    o.wrapped.mask[i] = 1;
  }
  return o;
}

Image surrogate_backward(const SurrogateOutput& o, const SurrogateParams& p, const std::vector<double>& grad_phase) {
  const int w = p.carrier.width, h = p.carrier.height;
  if (grad_phase.size() != p.carrier.size()) throw Error(ErrorCode::ShapeMismatch, "surrogate gradient size");
  Image gmc(w, h), gms(w, h);
  for (std::size_t i = 0; i < grad_phase.size(); ++i) {
    if (!o.wrapped.mask[i] || grad_phase[i] == 0.0) continue;
    const double r2 = o.mc[i] * o.mc[i] + o.ms[i] * o.ms[i];
    gmc[i] = grad_phase[i] * o.ms[i] / r2;
    gms[i] = -grad_phase[i] * o.mc[i] / r2;
  }
  const Image gjc = gaussian_blur(gmc, p.rho);
  const Image gjs = gaussian_blur(gms, p.rho);
  Image gr(w, h), gl(w, h);
  for (std::size_t i = 0; i < gr.size(); ++i) {
    if (!o.region[i]) continue;
    gr[i] = gjc[i] * std::cos(p.carrier[i]) + gjs[i] * std::sin(p.carrier[i]);
    gl[i] = -gr[i] / o.smoothed_region[i];
  }
  const Image back = gaussian_blur(gl, p.background_sigma);
  Image gi(w, h);
  for (std::size_t i = 0; i < gi.size(); ++i)
    if (o.region[i]) gi[i] = gr[i] + back[i];
  return gi;
}

RmseResult rmse_aligned(const PointCloud& adv, const PointCloud& clean) {
  if (!adv.has_provenance() || !clean.has_provenance()) throw Error(ErrorCode::NoOverlap, "clouds lack provenance");
  std::unordered_map<std::int64_t, std::size_t> where;
  for (std::size_t i = 0; i < clean.size(); ++i) where[pixel_key(clean.source_pixels[i][0], clean.source_pixels[i][1])] = i;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto it = where.find(pixel_key(adv.source_pixels[i][0], adv.source_pixels[i][1]));
    if (it != where.end()) pairs.emplace_back(i, it->second);
  }
  if (pairs.empty()) throw Error(ErrorCode::NoOverlap, "no matched points");
  const Normalized ref = renormalize(clean);
  double sum = 0.0;
  for (const auto& [a, b] : pairs) sum += (adv.points[a] - clean.points[b]).norm() / ref.scale;
  RmseResult r;
  r.matched = pairs.size();
  const double n = static_cast<double>(pairs.size());
  r.mean_distance = sum / n;
  r.rmse = sum / (n * n);
  return r;
}

RmseResult rmse_aligned(const std::vector<PointCloud>& adv, const std::vector<PointCloud>& clean) {
  if (adv.size() != clean.size() || adv.empty()) throw Error(ErrorCode::NoOverlap, "batch sizes differ or empty");
  RmseResult r;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const RmseResult one = rmse_aligned(adv[i], clean[i]);
    r.rmse += one.rmse;
    r.mean_distance += one.mean_distance;
    r.matched += one.matched;
  }
  r.rmse /= static_cast<double>(adv.size());
  r.mean_distance /= static_cast<double>(adv.size());
  return r;
}

SingleShotScan single_shot_scan(const CaptureRig& rig, const FringePatternSet& patterns,
                                const SurrogateParams& surrogate, const Image* illumination) {
  const Captures c = capture_scan(rig, patterns, illumination);
  SingleShotScan s;
  s.surrogate = fringe_analysis_surrogate(c.shifts.front(), surrogate);
  const Image threshold = mean_image(c.shifts);
  std::vector<Mask> bits;
  for (const auto& g : c.grays) bits.push_back(binarize(g, threshold));
  s.unwrapped = unwrap_phase(s.surrogate.wrapped, bits, patterns.fringe_count);
  s.reconstruction = reconstruct_cloud(s.unwrapped.absolute, rig.calibration());
  return s;
}

PointCloud scan_face_single_shot(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration,
                                 const FringePatternSet& patterns, const SurrogateParams& surrogate) {
  const CaptureRig rig(face_scene(config, sample, calibration), calibration, face_render_options(config, sample));
  const Image zero(rig.extra_width(), rig.extra_height());
  return single_shot_scan(rig, patterns, surrogate, &zero).reconstruction.cloud;
}

namespace {

struct SuperContext {
  const AttackScene* scene;
  const ModelParams* model;
  AttackConfig cfg;
  RenderOptions loop_options;
  RenderOptions world_options;
  CaptureRig loop_rig;
  CaptureRig world_rig;
  FringePatternSet base;
  SurrogateParams surrogate;
  Image zero;
  SingleShotScan loop_clean;
  SingleShotScan world_clean;
  SurrogateOutput loop_clean_shot;
  SensitivityMap sens;
  AdvLossSetup setup;
  Normalized clean_norm;
  Logits clean_logits;

  static RenderOptions loop_opts(const AttackScene& s, const AttackConfig& c) {
    RenderOptions o = s.world;
    o.noise_sigma = 0.0;
    o.gamma.reset();
    if (c.assumed_gamma) o.gamma = GammaModel{*c.assumed_gamma};
    return o;
  }
  static RenderOptions world_opts(const AttackScene& s, const AttackConfig& c) {
    RenderOptions o = s.world;
    o.noise_sigma = c.verify_noise;
    return o;
  }

  SuperContext(const AttackScene& s, const ModelParams& m, const AttackConfig& c)
      : scene(&s),
        model(&m),
        cfg(c),
        loop_options(loop_opts(s, c)),
        world_options(world_opts(s, c)),
        loop_rig(*s.scene, *s.calibration, loop_options),
        world_rig(*s.scene, *s.calibration, world_options) {
    base = scanner_patterns(*s.calibration, s.scan);
    surrogate = make_surrogate(*s.calibration, s.scan.fringe_count, s.reference_depth, s.scene->width, s.scene->height);
    surrogate.rho = c.surrogate_rho;
    surrogate.background_sigma = c.background_sigma;
    zero = Image(loop_rig.extra_width(), loop_rig.extra_height());
    loop_clean = single_shot_scan(loop_rig, base, surrogate, &zero);
    world_clean = single_shot_scan(world_rig, base, surrogate, &zero);
    loop_clean_shot = loop_clean.surrogate;
    const PhaseMap& phi = world_clean.unwrapped.absolute;
    const auto [u0, v0] = face_center(phi);
    const double w_s = c.sensitivity_width > 0.0 ? c.sensitivity_width : zero.width / 4.0;
    PhaseMap grid_mask(zero.width, zero.height, PhaseKind::Absolute, phi.fringe_count);
    if (zero.same_shape(phi.width, phi.height)) grid_mask = phi;
    sens = sensitivity_map(grid_mask, u0, v0, w_s, c.sensitivity_radius);
    setup.model = &m;
    setup.calibration = s.calibration;
    setup.mode = c.mode;
    setup.target = c.loss_target();
    setup.kappa = c.kappa;
    setup.samples = c.tiv ? c.transform_samples : 1;
    setup.tiv = c.tiv;
    setup.transforms = c.transforms;
    setup.fps_seed = verification_fps_seed(c);
    clean_norm = renormalize(loop_clean.reconstruction.cloud);
    clean_logits = classify_cloud(m, world_clean.reconstruction.cloud, setup.fps_seed, *s.calibration, phi.width,
                                  phi.height);
  }
};

AttackResult super_base(const SuperContext& ctx, double lambda) {
  AttackResult r;
  r.mode = ctx.cfg.mode;
  r.label = ctx.cfg.label;
  r.target = ctx.cfg.loss_target();
  r.lambda = lambda;
  r.clean_phase = ctx.world_clean.unwrapped.absolute;
  r.clean_cloud = ctx.world_clean.reconstruction.cloud;
  r.clean_logits = ctx.clean_logits;
  return r;
}

void realize_illumination(const SuperContext& ctx, const Image& x, AttackResult& r) {
  const SingleShotScan scan = single_shot_scan(ctx.world_rig, ctx.base, ctx.surrogate, &x);
  r.adversarial_cloud = scan.reconstruction.cloud;
  r.adversarial_phase = scan.unwrapped.absolute;
  r.logits = classify_cloud(*ctx.model, r.adversarial_cloud, ctx.setup.fps_seed, *ctx.scene->calibration,
                            x.width, x.height);
  r.success = criterion_met(r.logits, ctx.cfg.loss_target(), ctx.cfg.mode);
  r.illumination = x;
  r.order_changes = count_order_changes(scan.unwrapped.order, scan.unwrapped.absolute,
                                        ctx.world_clean.unwrapped.order, ctx.world_clean.unwrapped.absolute);
  const RmseResult e = safe_rmse(r.adversarial_cloud, r.clean_cloud);
  r.rmse = e.rmse;
  r.mean_distance = e.mean_distance;
  double l1 = 0.0, l2 = 0.0;
  const PhaseMap& a = scan.unwrapped.absolute;
  const PhaseMap& b = ctx.world_clean.unwrapped.absolute;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a.mask[i] || !b.mask[i]) continue;
    const double d = a.values[i] - b.values[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  r.l1 = l1;
  r.l2 = std::sqrt(l2);
}

AttackResult run_super(const SuperContext& ctx, double lambda) {
  const AttackConfig& cfg = ctx.cfg;
  const double lambda2 = cfg.lambda2 < 0.0 ? lambda : cfg.lambda2;
  AttackResult r = super_base(ctx, lambda);
  const PatternImage& pattern = ctx.base.shift_patterns.front();
  const PhaseMap& clean_abs = ctx.loop_clean.unwrapped.absolute;
  const Reconstruction& clean_rec = ctx.loop_clean.reconstruction;
  const std::size_t npix = ctx.zero.size();
  Image x(ctx.zero.width, ctx.zero.height, cfg.init_noise);

  std::optional<Image> best;
  double best_distance = std::numeric_limits<double>::infinity();
  double best_margin = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const Image shot = ctx.loop_rig.render(pattern, &x, 0);
    const SurrogateOutput so = fringe_analysis_surrogate(shot, ctx.surrogate);
    PhaseMap phi = clean_abs;
    std::vector<std::uint8_t> live(phi.size(), 0);
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (!phi.mask[i] || !so.wrapped.mask[i] || !ctx.loop_clean_shot.wrapped.mask[i]) continue;
      phi.values[i] += wrap_pi(so.wrapped.values[i] - ctx.loop_clean_shot.wrapped.values[i]);
      live[i] = 1;
    }
    AdvLossEval ev = tiv_adv_loss(phi, ctx.setup, derive_seed(derive_seed(cfg.seed, lambda_stream(lambda)), it));
    const Reconstruction& rec = ev.reconstruction;
    // RMSE against the clean loop cloud, normalized with clean constants.
    double rmse = 0.0;
    const double n = static_cast<double>(rec.cloud.size());
    std::vector<double> grad_phase = ev.grad_phase;
    if (rec.cloud.size() == clean_rec.cloud.size()) {
      for (std::size_t k = 0; k < rec.cloud.size(); ++k) {
        const Vec3 d = (rec.cloud.points[k] - clean_rec.cloud.points[k]) / ctx.clean_norm.scale;
        const double len = d.norm();
        rmse += len / (n * n);
        if (len > 0.0) {
          const Vec3 gp = cfg.lambda1 * d / (len * ctx.clean_norm.scale * n * n);
          grad_phase[rec.pixel_index[k]] += gp.dot(rec.d_point_d_phase[k]);
        }
      }
    }
    for (std::size_t i = 0; i < grad_phase.size(); ++i)
      if (!live[i]) grad_phase[i] = 0.0;
    const Image gi = surrogate_backward(so, ctx.surrogate, grad_phase);
    Image gx = ctx.loop_rig.backward_extra(pattern, x, gi, 0);
    double distance = 0.0;
    for (std::size_t i = 0; i < npix; ++i) {
      distance += ctx.sens.weights[i] * std::abs(x[i]);
      gx[i] += lambda2 * ctx.sens.weights[i] * sign(x[i]);
      if (!std::isfinite(gx[i])) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
    }
    const double total = ev.loss + cfg.lambda1 * rmse + lambda2 * distance;
    r.trace.push_back({lambda, it, ev.loss, distance, total, ev.loss});
    r.iterations_run = it + 1;
    if ((ev.loss <= -cfg.kappa || ev.loss < -std::max(cfg.accept_margin, cfg.illumination_accept_margin)) &&
        distance < best_distance) {
      best = x;
      best_distance = distance;
      best_margin = ev.loss;
    }
    for (std::size_t i = 0; i < npix; ++i) x[i] = std::clamp(x[i] - cfg.alpha_illumination * sign(gx[i]), 0.0, 1.0);
  }
  r.surrogate_success = best.has_value();
  r.distance = best ? best_distance : (r.trace.empty() ? std::numeric_limits<double>::infinity() : r.trace.back().distance);
  r.final_margin = best ? best_margin : (r.trace.empty() ? 0.0 : r.trace.back().margin);
  realize_illumination(ctx, best ? *best : x, r);
  return r;
}

}  // namespace

Verification verify_illumination(const AttackScene& scene, const ModelParams& model, const Image& illumination,
                                 const AttackConfig& config, const std::optional<RigidTransform>& test_transform) {
  const CaptureRig rig(*scene.scene, *scene.calibration, SuperContext::world_opts(scene, config));
  const FringePatternSet base = scanner_patterns(*scene.calibration, scene.scan);
  SurrogateParams sp = make_surrogate(*scene.calibration, scene.scan.fringe_count, scene.reference_depth,
                                      scene.scene->width, scene.scene->height);
  sp.rho = config.surrogate_rho;
  sp.background_sigma = config.background_sigma;
  const SingleShotScan scan = single_shot_scan(rig, base, sp, &illumination);
  Verification v;
  v.cloud = scan.reconstruction.cloud;
  v.absolute = scan.unwrapped.absolute;
  v.order = scan.unwrapped.order;
  const PointCloud seen = test_transform ? apply_transform(v.cloud, *test_transform) : v.cloud;
  v.logits = classify_cloud(model, seen, verification_fps_seed(config), *scene.calibration, illumination.width,
                            illumination.height);
  v.success = criterion_met(v.logits, config.loss_target(), config.mode);
  return v;
}

AttackResult phase_superposition_at_lambda(const AttackScene& scene, const ModelParams& model,
                                           const AttackConfig& config, double lambda) {
  config.validate(model.classes);
  const SuperContext ctx(scene, model, config);
  return run_super(ctx, lambda);
}

AttackResult phase_superposition_attack(const AttackScene& scene, const ModelParams& model,
                                        const AttackConfig& config) {
  config.validate(model.classes);
  const SuperContext ctx(scene, model, config);
  AttackResult immediate = super_base(ctx, 0.0);
  immediate.adversarial_cloud = immediate.clean_cloud;
  immediate.adversarial_phase = immediate.clean_phase;
  immediate.illumination = ctx.zero;
  immediate.logits = ctx.clean_logits;
  immediate.final_margin = logits_loss(ctx.clean_logits, config.loss_target(), config.mode, config.kappa).value;
  if (config.iterations == 0 || criterion_met(ctx.clean_logits, config.loss_target(), config.mode)) {
    immediate.success = criterion_met(ctx.clean_logits, config.loss_target(), config.mode);
    immediate.surrogate_success = immediate.success;
    immediate.note = immediate.success ? "clean input already meets the criterion" : "AttackFailed";
    return immediate;
  }
  return finish(search([&](double lambda) { return run_super(ctx, lambda); }, config), std::move(immediate));
}

}  // namespace fringeforge
