// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/attack.hpp"
#include "fringeforge/config.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fringeforge {

/// Worker count from FRINGEFORGE_THREADS, else hardware concurrency (min 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
/// rethrown after all workers stop (first by index).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Scanned cloud of one capture with the configured scanner.
PointCloud scan_capture(const RunConfig& config, const Calibration& calibration, int identity, int expression);

/// All identities x expressions of the face set, scanned in parallel.
Dataset build_dataset(const RunConfig& config, int threads);

/// Trains on build_dataset; class names are "id<k>".
TrainReport train_model(const RunConfig& config, int threads);

struct NamedModel {
  std::string name;
  const ModelParams* model = nullptr;
};

struct Instance {
  int index = 0;
  int identity = 0;
  int expression = 0;
  AttackMode mode = AttackMode::Dodge;
  int target = -1;  // impersonation target (uniform over the other classes)
  std::uint64_t seed = 0;
};

std::vector<Instance> make_instances(const RunConfig& config, AttackMode mode, int classes);

/// One attacked instance. Runtime is kept out of the report.
struct InstanceRecord {
  std::string group;
  std::string algorithm;
  std::string shadow;
  std::string victim;
  std::string variant;
  std::string flags;
  AttackMode mode = AttackMode::Dodge;
  int index = 0;
  int identity = 0;
  int label = 0;
  int target = -1;
  std::uint64_t seed = 0;
  bool error = false;
  std::string note;
  bool clean_correct = false;
  bool success = false;
  bool surrogate_success = false;
  bool reverified = false;
  double lambda = 0.0;
  double final_margin = 0.0;
  double distance = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double median_abs_delta = 0.0;  // median |phi' - phi| over clean valid pixels
  double rmse = 0.0;
  double mean_distance = 0.0;
  double max_column_shift = 0.0;
  int conflicts = 0;
  int order_changes = 0;
  int iterations = 0;
  double transform_success = 0.0;  // fraction of test-time random transforms meeting the criterion
  double rotation_success = 0.0;   // fraction of uniform test rotations meeting the criterion
  double rotation_target_prob = 0.0;  // mean softmax of the loss target under those rotations
  double seconds = 0.0;
};

struct GroupSummary {
  std::string group;
  std::string algorithm;
  std::string shadow;
  std::string victim;
  std::string variant;
  std::string flags;
  AttackMode mode = AttackMode::Dodge;
  int instances = 0;
  int errors = 0;
  int successes = 0;
  int reverified = 0;
  int clean_correct = 0;
  double asr = 0.0;
  double transform_asr = 0.0;
  double rotation_asr = 0.0;
  double rotation_target_prob = 0.0;
  double mean_rmse = 0.0;  // raw; tables show x10
  double mean_distance = 0.0;
  double mean_l1 = 0.0;
  double median_l1 = 0.0;
  double max_column_shift = 0.0;
  int order_changes = 0;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<InstanceRecord> records;
  std::vector<GroupSummary> groups;
  bool double_entry_ok = true;  // success and re-verification agree on every record
};

/// Pure fold over records; groups sorted by name, records by (group, index).
ExperimentReport aggregate(std::vector<InstanceRecord> records, std::uint64_t seed, std::uint64_t config_hash);

std::string report_json(const ExperimentReport& report);
ExperimentReport report_from_json(const std::string& text);  // re-aggregates the records
std::string report_csv(const ExperimentReport& report);
/// Markdown table per group; RMSE multiplied by 10 for display.
std::string report_table(const ExperimentReport& report);
/// Per-record seconds, separate from the report so the latter stays byte-stable.
std::string timing_json(const ExperimentReport& report);

/// Called from worker threads after each instance (artifact writing).
using ResultSink = std::function<void(const InstanceRecord&, const AttackResult&)>;

struct SweepOptions {
  std::string variant = "full";
  int threads = 1;
  ResultSink sink;
  std::vector<AttackMode> modes;  // empty: eval.modes
};

/// Attacks every instance with every model (white box) and aggregates.
ExperimentReport run_benchmark(const RunConfig& config, const std::vector<NamedModel>& models,
                               const SweepOptions& options);

struct AblationFlags {
  bool direction_constraint = true;
  bool renormalize_in_loop = true;
  bool tiv = true;
  std::string name() const;  // e.g. "dz1-n0-t1"
};
std::vector<AblationFlags> all_ablation_flags();

/// One report per flag combination.
std::vector<ExperimentReport> ablation(const RunConfig& config, const NamedModel& model,
                                       const std::vector<AblationFlags>& flags, const SweepOptions& options);

struct TransferMatrix {
  std::vector<std::string> shadows;
  std::vector<std::string> victims;
  std::vector<std::vector<double>> asr;  // [shadow][victim]
  ExperimentReport report;               // one group per (shadow, victim)
};

/// Adversarial examples built on each shadow, re-simulated and classified by
/// each victim. Phase shifting only.
TransferMatrix transfer_matrix(const RunConfig& config, const std::vector<NamedModel>& shadows,
                               const std::vector<NamedModel>& victims, const SweepOptions& options);
std::string transfer_json(const TransferMatrix& m);

}  // namespace fringeforge
