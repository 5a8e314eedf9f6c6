// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>

namespace fringeforge {
namespace {

RunConfig small_config() {
  RunConfig c;
  apply_overrides(c, {"faces.identities=4", "faces.expressions=8", "train.epochs=20", "attack.iterations=15",
                      "attack.search_steps=2", "eval.instances=3", "eval.transform_samples=3", "eval.rotation_samples=3"});
  return c;
}

struct Trained {
  RunConfig config = small_config();
  ModelParams model;
  ModelParams other;
  Trained() {
    model = train_model(config, 1).model;
    RunConfig c = config;
    c.train.seed = 2;
    c.train.widths = {16, 32, 16};
    other = train_model(c, 1).model;
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

TEST(Workers, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(97);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw Error(ErrorCode::Io, "x");
               }),
               Error);
}

TEST(Workers, CountFromEnvironment) {
  ::setenv("FRINGEFORGE_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3);
  ::setenv("FRINGEFORGE_THREADS", "zero", 1);
  EXPECT_THROW(worker_count(), Error);
  ::unsetenv("FRINGEFORGE_THREADS");
  EXPECT_GE(worker_count(), 1);
}

TEST(Instances, TargetsExcludeLabelAndCoverClasses) {
  RunConfig c;
  c.eval.instances = 40;
  const auto a = make_instances(c, AttackMode::Impersonate, 40);
  const auto b = make_instances(c, AttackMode::Impersonate, 40);
  ASSERT_EQ(a.size(), 40u);
  std::vector<int> seen(40, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NE(a[i].target, a[i].identity);
    EXPECT_GE(a[i].target, 0);
    EXPECT_LT(a[i].target, 40);
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_EQ(a[i].seed, b[i].seed);
    ++seen[a[i].target];
  }
  EXPECT_GT(std::count_if(seen.begin(), seen.end(), [](int s) { return s > 0; }), 15);
  for (const Instance& d : make_instances(c, AttackMode::Dodge, 40)) EXPECT_EQ(d.target, -1);
}

InstanceRecord fake_record(const std::string& group, int index, bool success, double l1) {
  InstanceRecord r;
  r.group = group;
  r.algorithm = "phase_shifting";
  r.shadow = r.victim = "m";
  r.variant = "full";
  r.flags = "dz1-n1-t1";
  r.index = index;
  r.success = r.reverified = success;
  r.l1 = l1;
  r.rmse = 1e-5 * (index + 1);
  r.lambda = 0.1 / (index + 1);
  r.transform_success = success ? 0.75 : 0.0;
  return r;
}

TEST(Report, AggregationIsAPureFold) {
  std::vector<InstanceRecord> recs;
  for (int i = 0; i < 7; ++i) recs.push_back(fake_record(i % 2 ? "b" : "a", i, i % 3 != 0, 0.1 * i + 1.0 / 3.0));
  const ExperimentReport rep = aggregate(recs, 5, 77);
  ASSERT_EQ(rep.groups.size(), 2u);
  EXPECT_EQ(rep.groups[0].instances + rep.groups[1].instances, 7);
  for (const GroupSummary& g : rep.groups) {
    EXPECT_GE(g.asr, 0.0);
    EXPECT_LE(g.asr, 1.0);
    EXPECT_DOUBLE_EQ(g.asr, double(g.successes) / g.instances);
  }
  std::reverse(recs.begin(), recs.end());
  const std::string text = report_json(rep);
  EXPECT_EQ(report_json(aggregate(recs, 5, 77)), text);
  EXPECT_EQ(report_json(report_from_json(text)), text);
  EXPECT_TRUE(rep.double_entry_ok);
  recs[0].reverified = !recs[0].success;
  EXPECT_FALSE(aggregate(recs, 5, 77).double_entry_ok);
}

TEST(Report, TableScalesRmseOnlyForDisplay) {
  const ExperimentReport rep = aggregate({fake_record("g", 0, true, 1.0)}, 1, 1);
  EXPECT_DOUBLE_EQ(rep.groups[0].mean_rmse, 1e-5);
  EXPECT_NE(report_table(rep).find("1.000e-04"), std::string::npos);
  EXPECT_NE(report_csv(rep).find(",1e-05,"), std::string::npos);
}

TEST(Benchmark, DeterministicAcrossWorkerCounts) {
  const auto& t = trained();
  const std::vector<NamedModel> models{{"m", &t.model}};
  SweepOptions one, three;
  one.threads = 1;
  three.threads = 3;
  const ExperimentReport a = run_benchmark(t.config, models, one);
  const ExperimentReport b = run_benchmark(t.config, models, three);
  EXPECT_EQ(report_json(a), report_json(b));
  EXPECT_TRUE(a.double_entry_ok);
  ASSERT_EQ(a.groups.size(), 2u);
  for (const InstanceRecord& r : a.records) {
    EXPECT_FALSE(r.error) << r.note;
    EXPECT_LT(r.max_column_shift, 100.0);
    if (r.mode == AttackMode::Impersonate) EXPECT_NE(r.target, r.label);
  }
}

TEST(Benchmark, ZeroIterationsGivesNaturalErrorRate) {
  const auto& t = trained();
  RunConfig c = t.config;
  c.attack.iterations = 0;
  c.eval.instances = 4;
  SweepOptions o;
  o.modes = {AttackMode::Dodge};
  const ExperimentReport rep = run_benchmark(c, {{"m", &t.model}}, o);
  ASSERT_EQ(rep.groups.size(), 1u);
  const GroupSummary& g = rep.groups[0];
  EXPECT_EQ(g.successes, g.instances - g.clean_correct);
}

TEST(Ablation, OneReportPerFlagCombination) {
  const auto& t = trained();
  RunConfig c = t.config;
  c.eval.instances = 1;
  SweepOptions o;
  o.modes = {AttackMode::Dodge};
  const auto flags = all_ablation_flags();
  ASSERT_EQ(flags.size(), 8u);
  EXPECT_EQ(flags.back().name(), "dz0-n0-t0");
  const auto reps = ablation(c, {"m", &t.model}, {flags.front(), flags.back()}, o);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].records[0].flags, "dz1-n1-t1");
  EXPECT_EQ(reps[1].records[0].flags, "dz0-n0-t0");
  EXPECT_EQ(reps[1].records[0].variant, "dz0-n0-t0");
  EXPECT_LT(reps[1].records[0].max_column_shift, 100.0);
}

TEST(Transfer, DiagonalMatchesWhiteBox) {
  const auto& t = trained();
  RunConfig c = t.config;
  c.eval.instances = 2;
  SweepOptions o;
  o.modes = {AttackMode::Dodge};
  const std::vector<NamedModel> models{{"a", &t.model}, {"b", &t.other}};
  const TransferMatrix m = transfer_matrix(c, models, models, o);
  const ExperimentReport white = run_benchmark(c, models, o);
  ASSERT_EQ(m.asr.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    for (double v : m.asr[s]) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (const GroupSummary& g : white.groups)
      if (g.shadow == models[s].name) EXPECT_DOUBLE_EQ(m.asr[s][s], g.asr);
  }
  EXPECT_TRUE(m.report.double_entry_ok);
  EXPECT_THROW(transfer_matrix(c, {models[0]}, {}, o), Error);
}

}  // namespace
}  // namespace fringeforge
