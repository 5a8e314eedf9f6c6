// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/io.hpp"
#include "fringeforge/scan.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>

namespace fringeforge {
namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fringeforge_io_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

TEST(Io, Pgm16RoundTripsToQuantization) {
  Image img(7, 5);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = (i * 0.037) - 0.2;
  const fs::path p = scratch("a.pgm");
  write_pgm16(p, img);
  const Image back = read_pgm16(p);
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_NEAR(back[i], std::clamp(img[i], 0.0, 1.0), 0.5 / 65535.0 + 1e-12);
}

TEST(Io, PhaseMapKeepsMaskAndKind) {
  PhaseMap m(4, 3, PhaseKind::Absolute, 16);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.values[i] = 0.1 * i;
    m.mask[i] = i % 3 != 0;
  }
  const fs::path p = scratch("phase.bin");
  write_phase_map(p, m);
  const PhaseMap back = read_phase_map(p);
  EXPECT_EQ(back.kind, PhaseKind::Absolute);
  EXPECT_EQ(back.fringe_count, 16);
  EXPECT_EQ(back.mask, m.mask);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.mask[i]) EXPECT_EQ(back.values[i], m.values[i]);
}

TEST(Io, PlyKeepsProvenance) {
  PointCloud c;
  c.points = {Vec3(1.5, -2.25, 1500.125), Vec3(0.1, 0.2, 0.3)};
  c.source_pixels = {{3, 4}, {10, 63}};
  const fs::path p = scratch("c.ply");
  write_ply(p, c);
  const PointCloud back = read_ply(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.source_pixels, c.source_pixels);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_LT((back.points[i] - c.points[i]).norm(), 1e-12);
}

TEST(Io, CalibrationJsonRoundTrip) {
  const Calibration c = make_desk_rig(RigParams{});
  const Calibration back = calibration_from_json(calibration_to_json(c));
  EXPECT_LT((back.camera.A - c.camera.A).norm(), 1e-9 * c.camera.A.norm());
  EXPECT_LT((back.projector.A - c.projector.A).norm(), 1e-9 * c.projector.A.norm());
  EXPECT_EQ(back.projector_width, c.projector_width);
  EXPECT_EQ(back.projector_height, c.projector_height);
}

TEST(Io, ModelRoundTripClassifiesIdentically) {
  ModelParams m = init_model(Architecture::PointMlp, 6, {}, 5);
  m.class_names = {"a", "b", "c", "d", "e", "f"};
  const fs::path p = scratch("m.ffm");
  save_model(p, m);
  const ModelParams back = load_model(p);
  EXPECT_EQ(back.class_names, m.class_names);
  ASSERT_EQ(back.layers.size(), m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].weight, m.layers[l].weight);
    EXPECT_EQ(back.layers[l].bias, m.layers[l].bias);
  }
}

TEST(Io, SceneRoundTrip) {
  const Calibration cal = make_desk_rig(RigParams{});
  FaceSetConfig faces;
  const SceneSurface s = face_scene(faces, face_sample(faces, 0, 0), cal);
  const fs::path dir = scratch("scene");
  write_scene(dir, s);
  const SceneSurface back = read_scene(dir, cal.camera);
  EXPECT_EQ(back.depth.data, s.depth.data);
  EXPECT_EQ(back.albedo.data, s.albedo.data);
}

TEST(Io, MissingFileIsIoError) {
  try {
    read_text("/nonexistent/fringeforge/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}

}  // namespace
}  // namespace fringeforge
