// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/fringe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fringeforge {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::int64_t pixel_key(int u, int v) { return static_cast<std::int64_t>(v) << 32 | static_cast<std::uint32_t>(u); }

int positive_mod(int a, int m) {
  const int r = a % m;
  return r < 0 ? r + m : r;
}

}  // namespace

PatternImage::PatternImage(int width, int height, std::vector<double> column_profile)
    : width_(width), height_(height), profile_(std::move(column_profile)) {
  if (width_ <= 0 || height_ <= 0 || static_cast<int>(profile_.size()) != width_) {
    throw Error(ErrorCode::ShapeMismatch, "pattern profile does not match width");
  }
}

double PatternImage::at(int u, int v) const {
  if (!overrides_.empty()) {
    auto it = overrides_.find(pixel_key(u, v));
    if (it != overrides_.end()) return it->second;
  }
  return profile_[u];
}

void PatternImage::set(int u, int v, double value) {
  if (u < 0 || v < 0 || u >= width_ || v >= height_) {
    throw Error(ErrorCode::ShapeMismatch, "pattern pixel out of range");
  }
  overrides_[pixel_key(u, v)] = std::clamp(value, 0.0, 1.0);
}

double PatternImage::sample(double u, double v, double* d_du) const {
  u = std::clamp(u, 0.0, static_cast<double>(width_ - 1));
  v = std::clamp(v, 0.0, static_cast<double>(height_ - 1));
  int c0 = static_cast<int>(std::floor(u));
  int r0 = static_cast<int>(std::floor(v));
  if (c0 >= width_ - 1) c0 = std::max(0, width_ - 2);
  if (r0 >= height_ - 1) r0 = std::max(0, height_ - 2);
  const double fu = u - c0;
  const double fv = v - r0;
  const int c1 = std::min(c0 + 1, width_ - 1);
  const int r1 = std::min(r0 + 1, height_ - 1);
  if (overrides_.empty()) {
    if (d_du) *d_du = profile_[c1] - profile_[c0];
    return (1.0 - fu) * profile_[c0] + fu * profile_[c1];
  }
  const double p00 = at(c0, r0), p10 = at(c1, r0), p01 = at(c0, r1), p11 = at(c1, r1);
  if (d_du) *d_du = (1.0 - fv) * (p10 - p00) + fv * (p11 - p01);
  return (1.0 - fv) * ((1.0 - fu) * p00 + fu * p10) + fv * ((1.0 - fu) * p01 + fu * p11);
}

Image PatternImage::materialize() const {
  Image img(width_, height_);
  for (int v = 0; v < height_; ++v)
    for (int u = 0; u < width_; ++u) img.at(u, v) = profile_[u];
  for (const auto& [key, value] : overrides_) {
    const int v = static_cast<int>(key >> 32);
    const int u = static_cast<int>(key & 0xffffffff);
    img.at(u, v) = value;
  }
  return img;
}

int gray_pattern_count(int fringe_count) {
  int bits = 0;
  while ((1 << bits) < fringe_count) ++bits;
  return bits + 1;
}

int half_period_index(int column, int width, int fringe_count) {
  return static_cast<int>((2LL * fringe_count * column) / width);
}

std::uint32_t gray_encode(std::uint32_t value) { return value ^ (value >> 1); }

std::uint32_t gray_decode(std::uint32_t code) {
  std::uint32_t value = code;
  for (std::uint32_t shift = 1; shift < 32; shift <<= 1) value ^= value >> shift;
  return value;
}

FringePatternSet generate_patterns(int steps, int fringe_count, int width, int height) {
  if (steps < 3) throw Error(ErrorCode::InvalidConfig, "phase shifting needs at least 3 steps");
  if (fringe_count < 1) throw Error(ErrorCode::InvalidConfig, "fringe count must be >= 1");
  if (width < 2 || height < 1) throw Error(ErrorCode::InvalidConfig, "pattern size too small");
  if (width % fringe_count != 0) throw Error(ErrorCode::InvalidConfig, "width must be divisible by fringe count");

  FringePatternSet set;
  set.steps = steps;
  set.fringe_count = fringe_count;
  set.width = width;
  set.height = height;

  for (int n = 0; n < steps; ++n) {
    std::vector<double> profile(width);
    for (int u = 0; u < width; ++u) {
      profile[u] = 0.5 + 0.5 * std::cos(kTwoPi * fringe_count * u / width + kTwoPi * n / steps);
    }
    set.shift_patterns.emplace_back(width, height, std::move(profile));
  }

  const int bits = gray_pattern_count(fringe_count);
  for (int b = 0; b < bits; ++b) {
    const int bit = bits - 1 - b;
    std::vector<double> profile(width);
    for (int u = 0; u < width; ++u) {
      const auto code = gray_encode(static_cast<std::uint32_t>(half_period_index(u, width, fringe_count)));
      profile[u] = (code >> bit) & 1u ? 1.0 : 0.0;
    }
    set.gray_patterns.emplace_back(width, height, std::move(profile));
  }
  return set;
}

std::size_t PhaseMap::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

double demodulate_pixel(std::span<const double> intensities, double* modulation, std::span<double> grad) {
  const int n_steps = static_cast<int>(intensities.size());
  double s = 0.0, c = 0.0;
  for (int n = 0; n < n_steps; ++n) {
    const double theta = kTwoPi * n / n_steps;
    s += intensities[n] * std::sin(theta);
    c += intensities[n] * std::cos(theta);
  }
  const double r2 = s * s + c * c;
  if (modulation) *modulation = 2.0 / n_steps * std::sqrt(r2);
  if (!grad.empty()) {
    for (int n = 0; n < n_steps; ++n) {
      const double theta = kTwoPi * n / n_steps;
      grad[n] = r2 > 0.0 ? (s * std::cos(theta) - c * std::sin(theta)) / r2 : 0.0;
    }
  }
  double phi = std::atan2(-s, c);
  if (phi <= -kPi) phi = kPi;
  return phi;
}

PhaseMap wrapped_phase(std::span<const Image> captures, double modulation_threshold) {
  if (captures.size() < 3) throw Error(ErrorCode::InvalidConfig, "need at least 3 captures");
  const int w = captures[0].width, h = captures[0].height;
  for (const Image& img : captures) {
    if (!img.same_shape(w, h)) throw Error(ErrorCode::ShapeMismatch, "captures differ in shape");
  }
  PhaseMap map(w, h, PhaseKind::Wrapped, 1);
  std::vector<double> px(captures.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (std::size_t n = 0; n < captures.size(); ++n) px[n] = captures[n][i];
    double mod = 0.0;
    map.values[i] = demodulate_pixel(px, &mod);
    map.modulation[i] = mod;
    map.mask[i] = mod >= modulation_threshold ? 1 : 0;
  }
  return map;
}

Image mean_image(std::span<const Image> captures) {
  if (captures.empty()) throw Error(ErrorCode::InvalidConfig, "no captures");
  Image mean(captures[0].width, captures[0].height);
  for (const Image& img : captures) {
    if (!img.same_shape(mean)) throw Error(ErrorCode::ShapeMismatch, "captures differ in shape");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += img[i];
  }
  for (double& m : mean.data) m /= static_cast<double>(captures.size());
  return mean;
}

Mask binarize(const Image& capture, const Image& threshold) {
  if (!capture.same_shape(threshold)) throw Error(ErrorCode::ShapeMismatch, "threshold shape");
  Mask bits(capture.width, capture.height);
  for (std::size_t i = 0; i < capture.size(); ++i) bits[i] = capture[i] > threshold[i] ? 1 : 0;
  return bits;
}

UnwrapResult unwrap_phase(const PhaseMap& wrapped, std::span<const Mask> gray_bits, int fringe_count) {
  if (wrapped.kind != PhaseKind::Wrapped) throw Error(ErrorCode::InvalidConfig, "expected wrapped phase");
  for (const Mask& m : gray_bits) {
    if (!m.same_shape(wrapped.width, wrapped.height)) throw Error(ErrorCode::ShapeMismatch, "gray capture shape");
  }
  const int bits = static_cast<int>(gray_bits.size());
  const int n_s = fringe_count;
  if (n_s < 1 || gray_pattern_count(n_s) != bits) {
    throw Error(ErrorCode::ShapeMismatch, "gray pattern count does not match fringe count");
  }

  UnwrapResult result;
  result.absolute = PhaseMap(wrapped.width, wrapped.height, PhaseKind::Absolute, n_s);
  result.absolute.modulation = wrapped.modulation;
  result.order = Grid<int>(wrapped.width, wrapped.height, 0);
  const double upper = kTwoPi * n_s;

  for (std::size_t i = 0; i < wrapped.size(); ++i) {
    if (!wrapped.mask[i]) continue;
    std::uint32_t code = 0;
    for (int b = 0; b < bits; ++b) code = (code << 1) | (gray_bits[b][i] ? 1u : 0u);
    const std::uint32_t half = gray_decode(code);
    if (half >= static_cast<std::uint32_t>(2 * n_s)) {
      ++result.decode_failures;
      continue;
    }
    const int k1 = static_cast<int>(half >> 1);
    const int k2 = static_cast<int>((half + 1) >> 1);
    const double phi = wrapped.values[i];
    int k;
    if (std::abs(phi) < 0.5 * kPi) {
      k = k2;
    } else if (phi > 0.0) {
      k = k1;
    } else {
      k = k1 + 1;
    }
    double abs_phase = phi + kTwoPi * k;
    if (abs_phase < 0.0) {
      if (abs_phase < -0.5 * kPi) {
        ++result.decode_failures;
        continue;
      }
      abs_phase = 0.0;
    } else if (abs_phase >= upper) {
      if (abs_phase >= upper + 0.5 * kPi) {
        ++result.decode_failures;
        continue;
      }
      abs_phase = std::nextafter(upper, 0.0);
    }
    result.absolute.values[i] = abs_phase;
    result.absolute.mask[i] = 1;
    result.order[i] = k;
  }
  return result;
}

ColumnEstimate phase_to_column(double absolute_phase, int width, int fringe_count) {
  double real = width * absolute_phase / (kTwoPi * fringe_count);
  real = std::clamp(real, 0.0, std::nextafter(static_cast<double>(width), 0.0));
  const int rounded = std::min(static_cast<int>(std::lround(real)), width - 1);
  return {real, rounded};
}

double column_to_phase(double column, int width, int fringe_count) {
  return kTwoPi * fringe_count * column / width;
}

EncodeResult encode_adversarial_patterns(const PhaseMap& adversarial, const FringePatternSet& base,
                                         const ProjectorCorrespondence& corr) {
  if (adversarial.kind != PhaseKind::Absolute) throw Error(ErrorCode::InvalidConfig, "expected absolute phase");
  if (adversarial.width != corr.width || adversarial.height != corr.height ||
      corr.u_p.size() != adversarial.size() || corr.v_p.size() != adversarial.size() ||
      corr.valid.size() != adversarial.size()) {
    throw Error(ErrorCode::ShapeMismatch, "correspondence does not match phase map");
  }
  const int w = base.width;
  const int period = base.width / base.fringe_count;

  EncodeResult result;
  result.patterns = base;
  std::unordered_map<std::int64_t, int> written;

  for (int v = 0; v < adversarial.height; ++v) {
    for (int u = 0; u < adversarial.width; ++u) {
      const std::size_t i = adversarial.index(u, v);
      if (!adversarial.mask[i] || !corr.valid[i]) continue;
      const double u_adv = w * adversarial.values[i] / (kTwoPi * base.fringe_count);
      const int shift = static_cast<int>(std::lround(u_adv - corr.u_p[i]));
      if (std::abs(shift) > period) {
        throw Error(ErrorCode::InvalidConfig, "adversarial shift exceeds one fringe period");
      }
      if (shift == 0) continue;
      ++result.shifted_pixels;
      result.max_column_shift = std::max(result.max_column_shift, std::abs(static_cast<double>(shift)));

      const double up = corr.u_p[i], vp = corr.v_p[i];
      const int c0 = static_cast<int>(std::floor(up));
      const int r0 = static_cast<int>(std::floor(vp));
      const double fu = up - c0, fv = vp - r0;
      for (int dr = 0; dr < 2; ++dr) {
        const double wv = dr ? fv : 1.0 - fv;
        if (wv <= 1e-12) continue;
        for (int dc = 0; dc < 2; ++dc) {
          const double wu = dc ? fu : 1.0 - fu;
          if (wu <= 1e-12) continue;
          const int c = c0 + dc, r = r0 + dr;
          if (c < 0 || c >= w || r < 0 || r >= base.height) continue;
          const std::int64_t key = pixel_key(c, r);
          auto [it, inserted] = written.emplace(key, shift);
          if (!inserted && it->second != shift) {
            ++result.conflicts;
            it->second = shift;
          }
          const int source = positive_mod(c + shift, w);
          for (std::size_t n = 0; n < base.shift_patterns.size(); ++n) {
            result.patterns.shift_patterns[n].set(c, r, base.shift_patterns[n].at(source, r));
          }
        }
      }
    }
  }
  return result;
}

}  // namespace fringeforge
