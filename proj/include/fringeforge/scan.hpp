// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/fringe.hpp"
#include "fringeforge/photometric.hpp"
#include "fringeforge/reconstruct.hpp"

#include <optional>
#include <vector>

namespace fringeforge {

struct ScanConfig {
  int steps = 12;
  int fringe_count = 16;
  double modulation_threshold = kDefaultModulationThreshold;
};

FringePatternSet scanner_patterns(const Calibration& calibration, const ScanConfig& config);

struct Captures {
  std::vector<Image> shifts;
  std::vector<Image> grays;
};

/// Shift captures use noise streams 0..N-1, gray captures N onwards.
Captures capture_scan(const CaptureRig& rig, const FringePatternSet& patterns, const Image* extra = nullptr);

struct ScanResult {
  PhaseMap wrapped;
  UnwrapResult unwrapped;
  Reconstruction reconstruction;
};

/// Demodulate, binarize gray captures against the mean shift capture, unwrap, triangulate.
ScanResult decode_scan(const Captures& captures, const Calibration& calibration, int fringe_count,
                       double modulation_threshold = kDefaultModulationThreshold);

ScanResult run_scan(const CaptureRig& rig, const FringePatternSet& patterns, const ScanConfig& config,
                    const Image* extra = nullptr);

/// Synthetic face set: identity i uses seed derive_seed(seed, i), capture e
/// uses expression seed derive_seed(identity seed, e + 1).
struct FaceSetConfig {
  int identities = 40;
  int expressions = 10;
  std::uint64_t seed = 7;
  FaceParams face;
  RigParams rig;
  ScanConfig scan;
  double noise_sigma = 0.0;
  std::optional<GammaModel> gamma;  // projector response of the scanning world
};

struct FaceSample {
  int label = 0;
  int expression = 0;
  std::uint64_t identity_seed = 0;
  std::uint64_t expression_seed = 0;
};

FaceSample face_sample(const FaceSetConfig& config, int identity, int expression);
SceneSurface face_scene(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration);

/// World render options of one capture (gamma, seeded noise).
RenderOptions face_render_options(const FaceSetConfig& config, const FaceSample& sample);

/// Full simulated scan of one face; returns the reconstructed cloud.
PointCloud scan_face(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration,
                     const FringePatternSet& patterns);

}  // namespace fringeforge
