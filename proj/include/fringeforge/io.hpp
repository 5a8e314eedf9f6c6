// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/fringe.hpp"
#include "fringeforge/geometry.hpp"
#include "fringeforge/photometric.hpp"
#include "fringeforge/recognize.hpp"
#include "fringeforge/reconstruct.hpp"

#include <filesystem>
#include <string>

namespace fringeforge {

namespace fs = std::filesystem;

/// Whole-file helpers; errors carry the path.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);  // creates parent directories

/// 16-bit binary PGM, maxval 65535, linear: stored = round(clamp(v, 0, 1) * 65535).
void write_pgm16(const fs::path& path, const Image& image);
Image read_pgm16(const fs::path& path);

/// 8-bit grayscale PNG; values mapped linearly from [lo, hi] to [0, 255],
/// non-finite or masked pixels written as 0.
void write_png8(const fs::path& path, const Image& image, double lo, double hi, const Mask* mask = nullptr);

/// "u,v,x,y,z" rows (u, v = -1 when the cloud has no provenance).
void write_points_csv(const fs::path& path, const PointCloud& cloud);

/// Flat little-endian float64 values (masked pixels stored as NaN) plus a
/// JSON sidecar at path + ".json" with {width, height, kind, n_s}.
void write_phase_map(const fs::path& path, const PhaseMap& map);
PhaseMap read_phase_map(const fs::path& path);

/// Same format for depth images and scene layers; kind is a free tag.
void write_image_binary(const fs::path& path, const Image& image, const Mask* mask, const std::string& kind);
Image read_image_binary(const fs::path& path, Mask* mask = nullptr, std::string* kind = nullptr);

void write_depth(const fs::path& path, const DepthImage& depth);
DepthImage read_depth(const fs::path& path);

/// ASCII PLY with "comment pixel <i> <u> <v>" lines for provenance.
void write_ply(const fs::path& path, const PointCloud& cloud);
PointCloud read_ply(const fs::path& path);

/// Scene as <dir>/depth.bin + <dir>/albedo.bin (+ sidecars); normals recomputed on load.
void write_scene(const fs::path& dir, const SceneSurface& scene);
SceneSurface read_scene(const fs::path& dir, const ProjectionMatrix& camera);

/// {camera:{K,R,T}, projector:{K,R,T}, projector_width, projector_height}, row-major, mm.
std::string calibration_to_json(const Calibration& calibration);
Calibration calibration_from_json(const std::string& text);

/// u64 little-endian header length, JSON header, then float64 weights layer by
/// layer (weight row-major, then bias).
void save_model(const fs::path& path, const ModelParams& model);
ModelParams load_model(const fs::path& path);

}  // namespace fringeforge
