// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/core.hpp"

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace fringeforge {

/// A projector image stored as a per-column profile plus sparse per-pixel
/// overrides. Canonical fringe and gray-code patterns vary only along columns;
/// adversarial re-indexing touches a small set of pixels.
class PatternImage {
 public:
  PatternImage() = default;
  PatternImage(int width, int height, std::vector<double> column_profile);

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int u, int v) const;
  void set(int u, int v, double value);
  double column_value(int u) const { return profile_[u]; }

  /// Bilinear sample at continuous (u, v); pixel centers at integers.
  /// Coordinates are clamped to the image. Optionally returns d/du.
  double sample(double u, double v, double* d_du = nullptr) const;

  Image materialize() const;
  std::size_t override_count() const { return overrides_.size(); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> profile_;
  std::unordered_map<std::int64_t, double> overrides_;
};

struct FringePatternSet {
  int steps = 0;
  int fringe_count = 0;
  int width = 0;
  int height = 0;
  std::vector<PatternImage> shift_patterns;
  std::vector<PatternImage> gray_patterns;
};

/// Number of gray-code images for n_s fringes: ceil(log2 n_s) + 1.
int gray_pattern_count(int fringe_count);

/// Half-period index H(u) = floor(2 n_s u / w) and its reflected gray code.
int half_period_index(int column, int width, int fringe_count);
std::uint32_t gray_encode(std::uint32_t value);
std::uint32_t gray_decode(std::uint32_t code);

FringePatternSet generate_patterns(int steps, int fringe_count, int width, int height);

enum class PhaseKind { Wrapped, Absolute };

struct PhaseMap {
  int width = 0;
  int height = 0;
  PhaseKind kind = PhaseKind::Wrapped;
  int fringe_count = 1;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  std::vector<double> modulation;

  PhaseMap() = default;
  PhaseMap(int w, int h, PhaseKind k, int n_s)
      : width(w), height(h), kind(k), fringe_count(n_s),
        values(static_cast<std::size_t>(w) * h, 0.0),
        mask(static_cast<std::size_t>(w) * h, 0),
        modulation(static_cast<std::size_t>(w) * h, 0.0) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  std::size_t valid_count() const;
};

constexpr double kDefaultModulationThreshold = 0.01;

/// Per-pixel N-step demodulation. Returns the wrapped phase in (-pi, pi] and
/// writes the modulation 2/N |sum| and, when grad is non-null, d phi / d I_n.
double demodulate_pixel(std::span<const double> intensities, double* modulation,
                        std::span<double> grad = {});

PhaseMap wrapped_phase(std::span<const Image> captures,
                       double modulation_threshold = kDefaultModulationThreshold);

Image mean_image(std::span<const Image> captures);
Mask binarize(const Image& capture, const Image& threshold);

struct UnwrapResult {
  PhaseMap absolute;
  Grid<int> order;
  int decode_failures = 0;
};

/// Gray-code assisted unwrapping with complementary arbitration. gray_bits
/// are binarized captures of the gray patterns, most significant first.
UnwrapResult unwrap_phase(const PhaseMap& wrapped, std::span<const Mask> gray_bits, int fringe_count);

struct ColumnEstimate {
  double real = 0.0;
  int rounded = 0;
};

ColumnEstimate phase_to_column(double absolute_phase, int width, int fringe_count);
double column_to_phase(double column, int width, int fringe_count);

/// Continuous projector coordinates seen by each camera pixel in the clean scan.
struct ProjectorCorrespondence {
  int width = 0;
  int height = 0;
  std::vector<double> u_p;
  std::vector<double> v_p;
  std::vector<std::uint8_t> valid;
};

struct EncodeResult {
  FringePatternSet patterns;
  int conflicts = 0;
  int shifted_pixels = 0;
  double max_column_shift = 0.0;  // max |u_p' - u_p| in columns
};

/// Re-indexes the shift patterns so each camera pixel's projector footprint
/// carries the base intensity of column u_p + round(u_adv - u_p). Gray
/// patterns are left untouched, so the decoded fringe order is preserved.
/// Conflicting writes are resolved last-writer-wins in camera raster order.
EncodeResult encode_adversarial_patterns(const PhaseMap& adversarial, const FringePatternSet& base,
                                         const ProjectorCorrespondence& correspondence);

}  // namespace fringeforge
