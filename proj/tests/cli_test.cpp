// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <set>

namespace fringeforge {
namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("fringeforge_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    write_text(d / "small.cfg",
               "[faces]\nidentities = 4\nexpressions = 8\n[train]\nepochs = 20\n"
               "[attack]\niterations = 15\nsearch_steps = 2\n[eval]\ninstances = 2\n");
    return d;
  }();
  return dir;
}

// Runs the CLI; stdout and stderr go to <work>/last.log.
int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + work().string() + "' && " + env + " '" FRINGEFORGE_CLI "' " + args + " > last.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() { return read_text(work() / "last.log"); }

const fs::path& model() {
  static const fs::path m = [] {
    EXPECT_EQ(run("train --config small.cfg --out train"), 0) << last_log();
    return work() / "train" / "model.ffm";
  }();
  return m;
}

TEST(Cli, SceneManifestsAreDeterministic) {
  ASSERT_EQ(run("scene --count 3 --seed 7 --out a"), 0) << last_log();
  ASSERT_EQ(run("scene --count 3 --seed 7 --out b"), 0);
  const std::string m = read_text(work() / "a" / "manifest.json");
  EXPECT_EQ(m, read_text(work() / "b" / "manifest.json"));
  const auto j = nlohmann::json::parse(m);
  ASSERT_EQ(j.at("entries").size(), 3u);
  std::set<std::uint64_t> seeds;
  for (const auto& e : j.at("entries")) seeds.insert(e.at("identity_seed").get<std::uint64_t>());
  EXPECT_EQ(seeds.size(), 3u);
  EXPECT_TRUE(fs::exists(work() / "a" / "config.txt"));
  ASSERT_EQ(run("scene --count 0 --out empty"), 0);
  EXPECT_TRUE(nlohmann::json::parse(read_text(work() / "empty" / "manifest.json")).at("entries").empty());
}

TEST(Cli, UnknownKeyExitsOneNamingKey) {
  EXPECT_EQ(run("scene --out bad -s attack.kapa=3"), 1);
  EXPECT_NE(last_log().find("attack.kapa"), std::string::npos);
  EXPECT_EQ(run("attack --model /nonexistent.ffm --out x"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST(Cli, AttackWritesResultDirectory) {
  const fs::path m = model();
  const int code = run("attack --config small.cfg --model '" + m.string() + "' --identity 1 --mode dodge --out atk");
  ASSERT_TRUE(code == 0 || code == 2) << last_log();
  for (const char* f : {"config.txt", "metadata.json", "trace.csv", "search.csv", "clean.ply", "adversarial.ply",
                        "clean_phase.bin", "adversarial_phase.bin", "phase_offset.pgm"})
    EXPECT_TRUE(fs::exists(work() / "atk" / f)) << f;
  const auto meta = nlohmann::json::parse(read_text(work() / "atk" / "metadata.json"));
  EXPECT_EQ(meta.at("success").get<bool>(), code == 0);
  EXPECT_LT(meta.at("max_column_shift").get<double>(), 100.0);
}

TEST(Cli, EvalIsDeterministicAndReaggregationIdempotent) {
  const fs::path m = model();
  ASSERT_NE(run("eval --config small.cfg --model m='" + m.string() + "' --out e1", "FRINGEFORGE_THREADS=1"), 1)
      << last_log();
  ASSERT_NE(run("eval --config small.cfg --model m='" + m.string() + "' --out e2", "FRINGEFORGE_THREADS=3"), 1);
  fs::path run1;
  for (const auto& e : fs::directory_iterator(work() / "e1")) run1 = e.path();
  const fs::path run2 = work() / "e2" / run1.filename();
  for (const char* f : {"report.json", "report.csv", "table.md", "config.txt"})
    EXPECT_EQ(read_text(run1 / f), read_text(run2 / f)) << f;
  const std::string before = read_text(run1 / "report.json");
  const std::string csv = read_text(run1 / "report.csv");
  ASSERT_NE(run("eval --reaggregate '" + run1.string() + "'"), 1) << last_log();
  EXPECT_EQ(read_text(run1 / "report.json"), before);
  EXPECT_EQ(read_text(run1 / "report.csv"), csv);
}

TEST(Cli, ExportConvertsArtifacts) {
  ASSERT_EQ(run("scene --count 1 --out exp_scene"), 0);
  ASSERT_EQ(run("export --in exp_scene --out exp_out"), 0) << last_log();
  EXPECT_TRUE(fs::exists(work() / "exp_out" / "scene_0000" / "depth.png"));
  const std::string png = read_text(work() / "exp_out" / "scene_0000" / "depth.png");
  ASSERT_GT(png.size(), 8u);
  EXPECT_EQ(png.substr(1, 3), "PNG");
}

}  // namespace
}  // namespace fringeforge
