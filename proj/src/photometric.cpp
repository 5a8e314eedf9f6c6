// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fringeforge {

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Identity features: (x, y, sx, sy) in mm and the amplitude scale they draw from.
struct FeatureTemplate {
  double x, y, sx, sy;
  double FaceParams::*amplitude;
  double sign;
  bool mirrored;
};

constexpr FeatureTemplate kFeatures[] = {
    {0.0, 2.0, 10.0, 26.0, &FaceParams::nose, 1.0, false},    // nose ridge
    {0.0, 22.0, 7.0, 7.0, &FaceParams::nose, 0.35, false},    // nose tip
    {27.0, -32.0, 14.0, 6.0, &FaceParams::brow, 1.0, true},   // brows
    {27.0, -16.0, 11.0, 8.0, &FaceParams::eye, -1.0, true},   // eye sockets
    {38.0, 18.0, 16.0, 15.0, &FaceParams::cheek, 1.0, true},  // cheeks
    {0.0, 68.0, 18.0, 12.0, &FaceParams::chin, 1.0, false},   // chin
    {0.0, 42.0, 15.0, 4.0, &FaceParams::mouth, 1.0, false},   // lips
    {0.0, 48.0, 17.0, 3.0, &FaceParams::mouth, -0.8, false},  // mouth line
};

// Envelope (1 - r^2)^p inside the ellipse with derivatives in x and y.
double envelope(double x, double y, double a, double b, double power, double* dx, double* dy) {
  const double r2 = (x * x) / (a * a) + (y * y) / (b * b);
  if (r2 >= 1.0) {
    if (dx) *dx = 0.0;
    if (dy) *dy = 0.0;
    return 0.0;
  }
  const double base = 1.0 - r2;
  const double value = std::pow(base, power);
  const double d_r2 = -power * std::pow(base, power - 1.0);
  if (dx) *dx = d_r2 * 2.0 * x / (a * a);
  if (dy) *dy = d_r2 * 2.0 * y / (b * b);
  return value;
}

}  // namespace

FaceShape sample_face_shape(std::uint64_t identity_seed, const FaceParams& p, std::uint64_t expression_seed) {
  if (p.width < 2 || p.height < 2 || !(p.standoff > 0.0) || !(p.half_width > 0.0) || !(p.half_height > 0.0) ||
      p.identity_spread < 0.0 || p.identity_spread >= 1.0 || p.expression_jitter < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "invalid face parameters");
  }
  Rng id(derive_seed(identity_seed, 0x1d));
  const double s = p.identity_spread;
  auto vary = [&](double v) { return v * uniform(id, 1.0 - s, 1.0 + s); };

  FaceShape f;
  f.half_width = p.half_width * uniform(id, 1.0 - 0.3 * s, 1.0 + 0.3 * s);
  f.half_height = p.half_height * uniform(id, 1.0 - 0.3 * s, 1.0 + 0.3 * s);
  f.relief = vary(p.relief);
  for (const auto& t : kFeatures) {
    FaceBump b;
    b.x = t.x + uniform(id, -4.0, 4.0) * s;
    b.y = t.y + uniform(id, -8.0, 8.0) * s;
    b.sx = vary(t.sx);
    b.sy = vary(t.sy);
    b.amp = t.sign * vary(p.*t.amplitude);
    if (t.mirrored) {
      FaceBump left = b, right = b;
      left.x = -b.x;
      right.amp = b.amp * uniform(id, 0.9, 1.1);
      f.bumps.push_back(left);
      f.bumps.push_back(right);
    } else {
      f.bumps.push_back(b);
    }
  }
  f.albedo_base = uniform(id, 0.55, 0.85);
  for (int k = 0; k < 3; ++k) {
    f.albedo_waves.push_back({uniform(id, 0.02, 0.06), uniform(id, -0.08, 0.08), uniform(id, -0.08, 0.08),
                              uniform(id, 0.0, 2.0 * std::numbers::pi)});
  }

  if (expression_seed != 0 && p.expression_jitter > 0.0) {
    Rng ex(derive_seed(expression_seed, 0xe7));
    const double j = p.expression_jitter;
    for (auto& b : f.bumps) {
      b.amp += uniform(ex, -0.6, 0.6) * j * (std::abs(b.amp) > 0.0 ? 1.0 : 0.0);
      b.y += uniform(ex, -0.8, 0.8) * j;
    }
    // Mouth and cheeks carry most of an expression.
    const std::size_t n = f.bumps.size();
    f.bumps[n - 1].amp *= 1.0 + uniform(ex, -0.5, 0.5) * j;
    f.bumps[n - 2].amp *= 1.0 + uniform(ex, -0.3, 0.3) * j;
    f.relief *= 1.0 + uniform(ex, -0.01, 0.01) * j;
  }
  return f;
}

double face_height(const FaceShape& f, double x, double y, double* dx, double* dy) {
  double ex = 0.0, ey = 0.0;
  const double dome = envelope(x, y, f.half_width, f.half_height, 1.5, &ex, &ey);
  double h = f.relief * dome;
  double hx = f.relief * ex, hy = f.relief * ey;

  double wx = 0.0, wy = 0.0;
  const double fade = envelope(x, y, f.half_width, f.half_height, 2.0, &wx, &wy);
  if (fade > 0.0) {
    double sum = 0.0, sx = 0.0, sy = 0.0;
    for (const auto& b : f.bumps) {
      const double qx = (x - b.x) / b.sx, qy = (y - b.y) / b.sy;
      const double g = b.amp * std::exp(-0.5 * (qx * qx + qy * qy));
      sum += g;
      sx += -g * qx / b.sx;
      sy += -g * qy / b.sy;
    }
    h += fade * sum;
    hx += wx * sum + fade * sx;
    hy += wy * sum + fade * sy;
  }
  if (dx) *dx = hx;
  if (dy) *dy = hy;
  return h;
}

double face_albedo(const FaceShape& f, double x, double y) {
  const double r2 = (x * x) / (f.half_width * f.half_width) + (y * y) / (f.half_height * f.half_height);
  if (r2 >= 1.0) return 0.0;
  double a = f.albedo_base;
  for (const auto& w : f.albedo_waves) a += w[0] * std::cos(w[1] * x + w[2] * y + w[3]);
  return std::clamp(a, 0.0, 1.0);
}

SceneSurface surface_from_shape(const FaceShape& shape, const FaceParams& p, const ProjectionMatrix& camera) {
  SceneSurface scene;
  scene.width = p.width;
  scene.height = p.height;
  scene.depth = Image(p.width, p.height);
  scene.albedo = Image(p.width, p.height);
  scene.normals.resize(scene.depth.size());
  const double S = p.standoff;
  const Mat3 to_world = camera.R.transpose();

  for (int v = 0; v < p.height; ++v) {
    for (int u = 0; u < p.width; ++u) {
      const Vec3 n_dir = camera.K.triangularView<Eigen::Upper>().solve(Vec3(u, v, 1.0));
      const double xn = n_dir.x() / n_dir.z(), yn = n_dir.y() / n_dir.z();
      double hx = 0.0, hy = 0.0;
      const double h = face_height(shape, S * xn, S * yn, &hx, &hy);
      const double z = S - h;
      const double zx = -S * hx, zy = -S * hy;
      const Vec3 ray(xn, yn, 1.0);
      const Vec3 px = zx * ray + Vec3(z, 0.0, 0.0);
      const Vec3 py = zy * ray + Vec3(0.0, z, 0.0);
      Vec3 n = px.cross(py).normalized();
      if (n.z() > 0.0) n = -n;
      const std::size_t i = scene.depth.index(u, v);
      scene.depth[i] = z;
      scene.albedo[i] = face_albedo(shape, S * xn, S * yn);
      scene.normals[i] = to_world * n;
    }
  }
  return scene;
}

SceneSurface synth_face(std::uint64_t identity_seed, const FaceParams& params, const ProjectionMatrix& camera,
                        std::uint64_t expression_seed) {
  return surface_from_shape(sample_face_shape(identity_seed, params, expression_seed), params, camera);
}

Vec3 surface_point(const SceneSurface& scene, const ProjectionMatrix& camera, int u, int v) {
  const Vec3 d = camera.K.triangularView<Eigen::Upper>().solve(Vec3(u, v, 1.0));
  const Vec3 p_cam = d * (scene.depth.at(u, v) / d.z());
  return camera.R.transpose() * (p_cam - camera.T);
}

std::vector<Vec3> normals_from_depth(const Image& depth, const ProjectionMatrix& camera) {
  const int w = depth.width, h = depth.height;
  auto point = [&](int u, int v) {
    const Vec3 d = camera.K.triangularView<Eigen::Upper>().solve(Vec3(u, v, 1.0));
    return Vec3(d * (depth.at(u, v) / d.z()));
  };
  std::vector<Vec3> normals(depth.size());
  const Vec3 toward_camera_axis(0.0, 0.0, -1.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const int u0 = std::max(u - 1, 0), u1 = std::min(u + 1, w - 1);
      const int v0 = std::max(v - 1, 0), v1 = std::min(v + 1, h - 1);
      Vec3 n = (point(u1, v) - point(u0, v)).cross(point(u, v1) - point(u, v0));
      if (n.norm() == 0.0) n = toward_camera_axis;
      n.normalize();
      if (n.z() > 0.0) n = -n;
      normals[depth.index(u, v)] = camera.R.transpose() * n;
    }
  }
  return normals;
}

SceneSurface perturb_albedo(const SceneSurface& scene, double amount, std::uint64_t seed) {
  SceneSurface out = scene;
  Rng rng(derive_seed(seed, 0xa1));
  std::uniform_real_distribution<double> factor(1.0 - amount, 1.0 + amount);
  for (double& a : out.albedo.data) a = std::clamp(a * factor(rng), 0.0, 1.0);
  return out;
}

double shade_pixel(double albedo, const Vec3& normal, const Vec3& light, bool clamp_dot) {
  const double d = normal.dot(light);
  return albedo * (clamp_dot ? std::max(0.0, d) : d);
}

Image lambertian_shade(const SceneSurface& scene, const LightField& lights, bool clamp_dot) {
  if (lights.width != scene.width || lights.height != scene.height || lights.scanner.size() != scene.size() ||
      (!lights.attacker.empty() && lights.attacker.size() != scene.size())) {
    throw Error(ErrorCode::ShapeMismatch, "light field does not match scene");
  }
  Image out(scene.width, scene.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Vec3 s = lights.scanner[i];
    if (!lights.attacker.empty()) s += lights.attacker[i];
    out[i] = shade_pixel(scene.albedo[i], scene.normals[i], s, clamp_dot);
  }
  return out;
}

double GammaModel::apply(double u) const { return 0.5 * (std::tanh(gamma * (2.0 * u - 1.0)) + 1.0); }

double GammaModel::d_du(double u) const {
  const double t = std::tanh(gamma * (2.0 * u - 1.0));
  return gamma * (1.0 - t * t);
}

double GammaModel::d_dgamma(double u) const {
  const double x = 2.0 * u - 1.0;
  const double t = std::tanh(gamma * x);
  return 0.5 * x * (1.0 - t * t);
}

double gamma_distort(double u, const GammaModel& model) {
  if (!(model.gamma > 0.0)) throw Error(ErrorCode::InvalidConfig, "gamma must be positive");
  return model.apply(u);
}

GammaFit fit_gamma(std::span<const std::pair<double, double>> samples) {
  if (samples.size() < 3) throw Error(ErrorCode::InvalidConfig, "gamma fit needs at least 3 samples");
  std::vector<double> us;
  for (const auto& s : samples) us.push_back(s.first);
  std::sort(us.begin(), us.end());
  if (std::adjacent_find(us.begin(), us.end()) != us.end()) {
    throw Error(ErrorCode::InvalidConfig, "gamma fit needs distinct u values");
  }
  auto sse = [&](double g) {
    const GammaModel m{g};
    double e = 0.0;
    for (const auto& [u, obs] : samples) {
      const double r = m.apply(u) - obs;
      e += r * r;
    }
    return e;
  };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1e-3, b = 20.0;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = sse(c), fd = sse(d);
  while (b - a > 1e-11) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = sse(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = sse(d);
    }
  }
  GammaFit fit;
  fit.model.gamma = 0.5 * (a + b);
  fit.residual_rms = std::sqrt(sse(fit.model.gamma) / static_cast<double>(samples.size()));
  if (fit.residual_rms > 0.05) throw Error(ErrorCode::FitDiverged, "gamma residual above 0.05");
  return fit;
}

CaptureRig::CaptureRig(const SceneSurface& scene, const Calibration& calibration, const RenderOptions& options)
    : width_(scene.width), height_(scene.height), calibration_(calibration), options_(options) {
  if (scene.depth.size() != scene.albedo.size() || scene.normals.size() != scene.depth.size()) {
    throw Error(ErrorCode::ShapeMismatch, "scene buffers differ in size");
  }
  if (options.attacker && (options.attacker_width < 2 || options.attacker_height < 2)) {
    throw Error(ErrorCode::InvalidConfig, "attacker projector needs a size");
  }
  const std::size_t n = scene.size();
  points_.resize(n);
  u_p_.assign(n, 0.0);
  v_p_.assign(n, 0.0);
  scanner_gain_.assign(n, 0.0);
  attacker_gain_.assign(n, 0.0);
  ambient_.assign(n, 0.0);
  taps_.assign(n, {});
  in_view_ = Mask(width_, height_, 0);

  const auto& proj = calibration.projector;
  const Vec3 projector_center = proj.center();
  if (calibration.projector_width < 2 || calibration.projector_height < 2) {
    throw Error(ErrorCode::InvalidConfig, "calibration lacks the projector size");
  }
  const double pw = calibration.projector_width, ph = calibration.projector_height;
  const Vec3 attacker_center = options.attacker ? options.attacker->center() : calibration.camera.center();

  for (int v = 0; v < height_; ++v) {
    for (int u = 0; u < width_; ++u) {
      const std::size_t i = scene.depth.index(u, v);
      const Vec3 p = surface_point(scene, calibration.camera, u, v);
      points_[i] = p;
      const Vec3& nrm = scene.normals[i];
      const double a = scene.albedo[i];
      ambient_[i] = a * options.ambient;

      const Vec3 to_proj = projector_center - p;
      if (proj.R.row(2).dot(p) + proj.T.z() > 0.0) {
        const auto pp = project_point(proj, p);
        u_p_[i] = pp.u;
        v_p_[i] = pp.v;
        if (pp.u >= 0.0 && pp.u <= pw - 1.0 && pp.v >= 0.0 && pp.v <= ph - 1.0) {
          in_view_[i] = 1;
          scanner_gain_[i] = a * nrm.dot(to_proj.normalized()) * options.scanner_power;
        }
      }

      attacker_gain_[i] = a * nrm.dot((attacker_center - p).normalized()) * options.attacker_power;
      if (!options.attacker) {
        taps_[i][0] = {static_cast<std::int32_t>(i), 1.0};
      } else {
        const auto& att = *options.attacker;
        if (att.R.row(2).dot(p) + att.T.z() <= 0.0) continue;
        const auto q = project_point(att, p);
        if (q.u < 0.0 || q.v < 0.0 || q.u > options.attacker_width - 1 || q.v > options.attacker_height - 1) continue;
        const int c0 = std::min(static_cast<int>(std::floor(q.u)), options.attacker_width - 2);
        const int r0 = std::min(static_cast<int>(std::floor(q.v)), options.attacker_height - 2);
        const double fu = q.u - c0, fv = q.v - r0;
        const auto at = [&](int c, int r) { return static_cast<std::int32_t>(r * options.attacker_width + c); };
        taps_[i] = {Tap{at(c0, r0), (1 - fu) * (1 - fv)}, Tap{at(c0 + 1, r0), fu * (1 - fv)},
                    Tap{at(c0, r0 + 1), (1 - fu) * fv}, Tap{at(c0 + 1, r0 + 1), fu * fv}};
      }
    }
  }
}

int CaptureRig::extra_width() const { return options_.attacker ? options_.attacker_width : width_; }
int CaptureRig::extra_height() const { return options_.attacker ? options_.attacker_height : height_; }

double CaptureRig::emit(double value) const { return options_.gamma ? options_.gamma->apply(value) : value; }

double CaptureRig::emit_slope(double value) const { return options_.gamma ? options_.gamma->d_du(value) : 1.0; }

void CaptureRig::row_noise(std::uint64_t capture_index, int row, std::vector<double>& buffer) const {
  buffer.assign(width_, 0.0);
  if (options_.noise_sigma <= 0.0) return;
  Rng rng(derive_seed(derive_seed(options_.noise_seed, capture_index), static_cast<std::uint64_t>(row)));
  std::normal_distribution<double> n(0.0, options_.noise_sigma);
  for (double& x : buffer) x = n(rng);
}

double CaptureRig::pre_clamp(std::size_t i, const PatternImage& pattern, const Image* extra) const {
  double light = 0.0;
  if (in_view_[i]) light += scanner_gain_[i] * emit(pattern.sample(u_p_[i], v_p_[i]));
  if (extra) {
    double x = 0.0;
    for (const Tap& t : taps_[i])
      if (t.index >= 0) x += t.weight * (*extra)[t.index];
    light += attacker_gain_[i] * emit(x);
  }
  if (options_.clamp_dot) light = std::max(0.0, light);
  return light + ambient_[i];
}

Image CaptureRig::render(const PatternImage& pattern, const Image* extra, std::uint64_t capture_index) const {
  if (extra && !extra->same_shape(extra_width(), extra_height())) {
    throw Error(ErrorCode::ShapeMismatch, "attacker image size");
  }
  Image out(width_, height_);
  std::vector<double> noise;
  for (int v = 0; v < height_; ++v) {
    row_noise(capture_index, v, noise);
    for (int u = 0; u < width_; ++u) {
      const std::size_t i = out.index(u, v);
      out[i] = std::clamp(pre_clamp(i, pattern, extra) + noise[u], 0.0, 1.0);
    }
  }
  return out;
}

Image CaptureRig::backward_extra(const PatternImage& pattern, const Image& extra, const Image& grad_image,
                                 std::uint64_t capture_index) const {
  if (!extra.same_shape(extra_width(), extra_height()) || !grad_image.same_shape(width_, height_)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient shapes");
  }
  Image grad(extra.width, extra.height);
  std::vector<double> noise;
  for (int v = 0; v < height_; ++v) {
    row_noise(capture_index, v, noise);
    for (int u = 0; u < width_; ++u) {
      const std::size_t i = grad_image.index(u, v);
      if (grad_image[i] == 0.0) continue;
      double x = 0.0;
      for (const Tap& t : taps_[i])
        if (t.index >= 0) x += t.weight * extra[t.index];
      double light = attacker_gain_[i] * emit(x);
      if (in_view_[i]) light += scanner_gain_[i] * emit(pattern.sample(u_p_[i], v_p_[i]));
      if (options_.clamp_dot && light <= 0.0) continue;
      const double value = (options_.clamp_dot ? std::max(0.0, light) : light) + ambient_[i] + noise[u];
      if (value <= 0.0 || value >= 1.0) continue;
      const double g = grad_image[i] * attacker_gain_[i] * emit_slope(x);
      for (const Tap& t : taps_[i])
        if (t.index >= 0) grad[t.index] += g * t.weight;
    }
  }
  return grad;
}

ProjectorCorrespondence CaptureRig::correspondence() const {
  ProjectorCorrespondence c;
  c.width = width_;
  c.height = height_;
  c.u_p = u_p_;
  c.v_p = v_p_;
  c.valid = in_view_.data;
  return c;
}

Image render_capture(const SceneSurface& scene, const Calibration& calibration, const PatternImage& pattern,
                     const Image* extra, const RenderOptions& options) {
  return CaptureRig(scene, calibration, options).render(pattern, extra);
}

}  // namespace fringeforge
