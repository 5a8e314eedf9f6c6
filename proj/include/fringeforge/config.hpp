// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/attack.hpp"
#include "fringeforge/recognize.hpp"
#include "fringeforge/scan.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fringeforge {

enum class AlgorithmKind { PhaseShifting, PhaseSuperposition };
const char* to_string(AlgorithmKind a);
AlgorithmKind parse_algorithm(const std::string& s);

/// Which scanner produces training and attack clouds.
enum class ScannerKind { MultiStep, SingleShot };
const char* to_string(ScannerKind s);
ScannerKind parse_scanner(const std::string& s);

struct EvalOptions {
  int instances = 40;             // identities 0..instances-1 are attacked
  int expression = -1;            // capture index; negative: the first unseen capture
  std::string modes = "dodge,impersonate";
  int transform_samples = 8;      // test-time random transforms per instance
  double transform_sigma_deg = 5.0;
  double transform_translation = 0.05;
  int rotation_samples = 8;       // uniform rotations per instance
  double rotation_range_deg = 10.0;
  std::uint64_t target_seed = 0x7a6;  // impersonation target stream
};

/// Fully resolved run configuration. Every field has a dotted key.
struct RunConfig {
  std::uint64_t seed = 1;
  FaceSetConfig faces;
  ScannerKind scanner = ScannerKind::MultiStep;
  double reference_depth = 1500.0;
  Architecture architecture = Architecture::PointMlp;
  TrainConfig train;
  AlgorithmKind algorithm = AlgorithmKind::PhaseShifting;
  AttackConfig attack;
  EvalOptions eval;

  RunConfig();
};

/// key = value lines; '#' starts a comment; "[section]" prefixes later keys
/// with "section.". Returns pairs in file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Sets one dotted key. Unknown keys and malformed values raise
/// InvalidConfig naming the key.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Applies "key=value" strings (command-line overrides).
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

RunConfig load_config(const std::filesystem::path& path);

/// Canonical dump: every key, sorted, shortest round-trip numbers. Loading
/// it reproduces the configuration exactly.
std::string render_config(const RunConfig& config);
std::vector<std::string> config_keys();

/// fnv1a of the canonical dump with the seed line removed.
std::uint64_t config_hash(const RunConfig& config);

/// Parsed eval.modes.
std::vector<AttackMode> eval_modes(const RunConfig& config);

/// Capture index used for attacks (the first one not used in training by default).
int attack_expression(const RunConfig& config);

}  // namespace fringeforge
