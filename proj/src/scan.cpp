// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/scan.hpp"

namespace fringeforge {

FringePatternSet scanner_patterns(const Calibration& calibration, const ScanConfig& config) {
  return generate_patterns(config.steps, config.fringe_count, calibration.projector_width,
                           calibration.projector_height);
}

Captures capture_scan(const CaptureRig& rig, const FringePatternSet& patterns, const Image* extra) {
  Captures c;
  std::uint64_t index = 0;
  for (const auto& p : patterns.shift_patterns) c.shifts.push_back(rig.render(p, extra, index++));
  for (const auto& p : patterns.gray_patterns) c.grays.push_back(rig.render(p, extra, index++));
  return c;
}

ScanResult decode_scan(const Captures& captures, const Calibration& calibration, int fringe_count,
                       double modulation_threshold) {
  ScanResult r;
  r.wrapped = wrapped_phase(captures.shifts, modulation_threshold);
  r.wrapped.fringe_count = fringe_count;
  const Image threshold = mean_image(captures.shifts);
  std::vector<Mask> bits;
  bits.reserve(captures.grays.size());
  for (const auto& g : captures.grays) bits.push_back(binarize(g, threshold));
  r.unwrapped = unwrap_phase(r.wrapped, bits, fringe_count);
  r.reconstruction = reconstruct_cloud(r.unwrapped.absolute, calibration);
  return r;
}

ScanResult run_scan(const CaptureRig& rig, const FringePatternSet& patterns, const ScanConfig& config,
                    const Image* extra) {
  return decode_scan(capture_scan(rig, patterns, extra), rig.calibration(), config.fringe_count,
                     config.modulation_threshold);
}

FaceSample face_sample(const FaceSetConfig& config, int identity, int expression) {
  FaceSample s;
  s.label = identity;
  s.expression = expression;
  s.identity_seed = derive_seed(config.seed, static_cast<std::uint64_t>(identity));
  s.expression_seed = derive_seed(s.identity_seed, static_cast<std::uint64_t>(expression) + 1);
  return s;
}

SceneSurface face_scene(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration) {
  return synth_face(sample.identity_seed, config.face, calibration.camera, sample.expression_seed);
}

RenderOptions face_render_options(const FaceSetConfig& config, const FaceSample& sample) {
  RenderOptions options;
  options.noise_sigma = config.noise_sigma;
  options.noise_seed = derive_seed(sample.expression_seed, 0x5ca);
  options.gamma = config.gamma;
  return options;
}

PointCloud scan_face(const FaceSetConfig& config, const FaceSample& sample, const Calibration& calibration,
                     const FringePatternSet& patterns) {
  const CaptureRig rig(face_scene(config, sample, calibration), calibration, face_render_options(config, sample));
  return run_scan(rig, patterns, config.scan).reconstruction.cloud;
}

}  // namespace fringeforge
