// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/config.hpp"

#include "fringeforge/io.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

namespace fringeforge {

const char* to_string(AlgorithmKind a) {
  return a == AlgorithmKind::PhaseShifting ? "phase_shifting" : "phase_superposition";
}

AlgorithmKind parse_algorithm(const std::string& s) {
  if (s == "phase_shifting") return AlgorithmKind::PhaseShifting;
  if (s == "phase_superposition") return AlgorithmKind::PhaseSuperposition;
  throw Error(ErrorCode::InvalidConfig, "unknown algorithm '" + s + "'");
}

const char* to_string(ScannerKind s) { return s == ScannerKind::MultiStep ? "multi_step" : "single_shot"; }

ScannerKind parse_scanner(const std::string& s) {
  if (s == "multi_step") return ScannerKind::MultiStep;
  if (s == "single_shot") return ScannerKind::SingleShot;
  throw Error(ErrorCode::InvalidConfig, "unknown scanner '" + s + "'");
}

RunConfig::RunConfig() {
  train.learning_rate = 0.05;
  train.epochs = 100;
  train.tiv_augment = true;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct BadValue {};

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw BadValue{};
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw BadValue{};
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const bool hex = s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X');
  const char* b = s.data() + (hex ? 2 : 0);
  const auto [p, ec] = std::from_chars(b, s.data() + s.size(), v, hex ? 16 : 10);
  if (ec != std::errc() || p != s.data() + s.size()) throw BadValue{};
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw BadValue{};
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
using Access = T& (*)(RunConfig&);

template <class T>
const T& read(Access<T> a, const RunConfig& c) {
  return a(const_cast<RunConfig&>(c));
}

Field f_double(Access<double> a) {
  return {[a](const RunConfig& c) { return fmt(read(a, c)); }, [a](RunConfig& c, const std::string& v) {
            a(c) = to_double(v);
          }};
}

Field f_int(Access<int> a) {
  return {[a](const RunConfig& c) { return std::to_string(read(a, c)); }, [a](RunConfig& c, const std::string& v) {
            const long long x = to_int(v);
            if (x < INT32_MIN || x > INT32_MAX) throw BadValue{};
            a(c) = static_cast<int>(x);
          }};
}

Field f_size(Access<std::size_t> a) {
  return {[a](const RunConfig& c) { return std::to_string(read(a, c)); }, [a](RunConfig& c, const std::string& v) {
            const long long x = to_int(v);
            if (x < 0) throw BadValue{};
            a(c) = static_cast<std::size_t>(x);
          }};
}

Field f_u64(Access<std::uint64_t> a) {
  return {[a](const RunConfig& c) { return std::to_string(read(a, c)); }, [a](RunConfig& c, const std::string& v) {
            a(c) = to_u64(v);
          }};
}

Field f_bool(Access<bool> a) {
  return {[a](const RunConfig& c) { return std::string(read(a, c) ? "true" : "false"); },
          [a](RunConfig& c, const std::string& v) { a(c) = to_bool(v); }};
}

Field f_string(Access<std::string> a) {
  return {[a](const RunConfig& c) { return read(a, c); }, [a](RunConfig& c, const std::string& v) { a(c) = v; }};
}

// "none" or a number.
Field f_opt_double(Access<std::optional<double>> a) {
  return {[a](const RunConfig& c) {
            const auto& o = read(a, c);
            return o ? fmt(*o) : std::string("none");
          },
          [a](RunConfig& c, const std::string& v) {
            if (v == "none") {
              a(c).reset();
            } else {
              a(c) = to_double(v);
            }
          }};
}

Field f_gamma(Access<std::optional<GammaModel>> a) {
  return {[a](const RunConfig& c) {
            const auto& o = read(a, c);
            return o ? fmt(o->gamma) : std::string("none");
          },
          [a](RunConfig& c, const std::string& v) {
            if (v == "none") {
              a(c).reset();
            } else {
              const double g = to_double(v);
              if (!(g > 0.0)) throw BadValue{};
              a(c) = GammaModel{g};
            }
          }};
}

Field f_widths(Access<std::vector<int>> a) {
  return {[a](const RunConfig& c) {
            const auto& w = read(a, c);
            if (w.empty()) return std::string("default");
            std::string s;
            for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
            return s;
          },
          [a](RunConfig& c, const std::string& v) {
            std::vector<int> w;
            if (v != "default") {
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) w.push_back(static_cast<int>(to_int(trim(item))));
            }
            a(c) = w;
          }};
}

template <class E>
Field f_enum(Access<E> a, E (*parse)(const std::string&), const char* (*name)(E)) {
  return {[a, name](const RunConfig& c) { return std::string(name(read(a, c))); },
          [a, parse](RunConfig& c, const std::string& v) { a(c) = parse(v); }};
}

DistanceKind parse_distance(const std::string& s) {
  if (s == "sensitivity_l1") return DistanceKind::SensitivityL1;
  if (s == "l2") return DistanceKind::L2;
  throw BadValue{};
}
const char* distance_name(DistanceKind d) { return d == DistanceKind::SensitivityL1 ? "sensitivity_l1" : "l2"; }
const char* mode_name(AttackMode m) { return to_string(m); }
const char* arch_name(Architecture a) { return to_string(a); }
const char* algo_name(AlgorithmKind a) { return to_string(a); }
const char* scanner_name(ScannerKind s) { return to_string(s); }

#define FF_ACCESS(T, expr) [](RunConfig & c) -> T& { return expr; }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["seed"] = f_u64(FF_ACCESS(std::uint64_t, c.seed));
    // Face set and rig.
    t["faces.identities"] = f_int(FF_ACCESS(int, c.faces.identities));
    t["faces.expressions"] = f_int(FF_ACCESS(int, c.faces.expressions));
    t["faces.seed"] = f_u64(FF_ACCESS(std::uint64_t, c.faces.seed));
    t["faces.noise_sigma"] = f_double(FF_ACCESS(double, c.faces.noise_sigma));
    t["faces.gamma"] = f_gamma(FF_ACCESS(std::optional<GammaModel>, c.faces.gamma));
    t["faces.standoff"] = f_double(FF_ACCESS(double, c.faces.face.standoff));
    t["faces.half_width"] = f_double(FF_ACCESS(double, c.faces.face.half_width));
    t["faces.half_height"] = f_double(FF_ACCESS(double, c.faces.face.half_height));
    t["faces.relief"] = f_double(FF_ACCESS(double, c.faces.face.relief));
    t["faces.nose"] = f_double(FF_ACCESS(double, c.faces.face.nose));
    t["faces.brow"] = f_double(FF_ACCESS(double, c.faces.face.brow));
    t["faces.eye"] = f_double(FF_ACCESS(double, c.faces.face.eye));
    t["faces.cheek"] = f_double(FF_ACCESS(double, c.faces.face.cheek));
    t["faces.chin"] = f_double(FF_ACCESS(double, c.faces.face.chin));
    t["faces.mouth"] = f_double(FF_ACCESS(double, c.faces.face.mouth));
    t["faces.identity_spread"] = f_double(FF_ACCESS(double, c.faces.face.identity_spread));
    t["faces.expression_jitter"] = f_double(FF_ACCESS(double, c.faces.face.expression_jitter));
    t["rig.camera_width"] = f_int(FF_ACCESS(int, c.faces.rig.camera_width));
    t["rig.camera_height"] = f_int(FF_ACCESS(int, c.faces.rig.camera_height));
    t["rig.camera_focal"] = f_double(FF_ACCESS(double, c.faces.rig.camera_focal));
    t["rig.projector_width"] = f_int(FF_ACCESS(int, c.faces.rig.projector_width));
    t["rig.projector_height"] = f_int(FF_ACCESS(int, c.faces.rig.projector_height));
    t["rig.projector_focal"] = f_double(FF_ACCESS(double, c.faces.rig.projector_focal));
    t["rig.baseline"] = f_double(FF_ACCESS(double, c.faces.rig.baseline));
    t["rig.standoff"] = f_double(FF_ACCESS(double, c.faces.rig.standoff));
    t["scan.steps"] = f_int(FF_ACCESS(int, c.faces.scan.steps));
    t["scan.fringe_count"] = f_int(FF_ACCESS(int, c.faces.scan.fringe_count));
    t["scan.modulation_threshold"] = f_double(FF_ACCESS(double, c.faces.scan.modulation_threshold));
    t["scan.scanner"] = f_enum<ScannerKind>(FF_ACCESS(ScannerKind, c.scanner), parse_scanner, scanner_name);
    t["scan.reference_depth"] = f_double(FF_ACCESS(double, c.reference_depth));
    // Training.
    t["train.architecture"] = f_enum<Architecture>(FF_ACCESS(Architecture, c.architecture), parse_architecture,
                                                   arch_name);
    t["train.widths"] = f_widths(FF_ACCESS(std::vector<int>, c.train.widths));
    t["train.epochs"] = f_int(FF_ACCESS(int, c.train.epochs));
    t["train.batch_size"] = f_int(FF_ACCESS(int, c.train.batch_size));
    t["train.learning_rate"] = f_double(FF_ACCESS(double, c.train.learning_rate));
    t["train.momentum"] = f_double(FF_ACCESS(double, c.train.momentum));
    t["train.clip_norm"] = f_double(FF_ACCESS(double, c.train.clip_norm));
    t["train.validation_fraction"] = f_double(FF_ACCESS(double, c.train.validation_fraction));
    t["train.points"] = f_size(FF_ACCESS(std::size_t, c.train.points));
    t["train.tiv_augment"] = f_bool(FF_ACCESS(bool, c.train.tiv_augment));
    t["train.augment.sigma_angle"] = f_double(FF_ACCESS(double, c.train.augment.sigma_angle));
    t["train.augment.sigma_translation"] = f_double(FF_ACCESS(double, c.train.augment.sigma_translation));
    t["train.seed"] = f_u64(FF_ACCESS(std::uint64_t, c.train.seed));
    // Attack.
    t["attack.algorithm"] = f_enum<AlgorithmKind>(FF_ACCESS(AlgorithmKind, c.algorithm), parse_algorithm, algo_name);
    t["attack.mode"] = f_enum<AttackMode>(FF_ACCESS(AttackMode, c.attack.mode), parse_mode, mode_name);
    t["attack.label"] = f_int(FF_ACCESS(int, c.attack.label));
    t["attack.target"] = f_int(FF_ACCESS(int, c.attack.target));
    t["attack.seed"] = f_u64(FF_ACCESS(std::uint64_t, c.attack.seed));
    t["attack.lambda_min"] = f_double(FF_ACCESS(double, c.attack.lambda_min));
    t["attack.lambda_max"] = f_double(FF_ACCESS(double, c.attack.lambda_max));
    t["attack.search_steps"] = f_int(FF_ACCESS(int, c.attack.search_steps));
    t["attack.iterations"] = f_int(FF_ACCESS(int, c.attack.iterations));
    t["attack.kappa"] = f_double(FF_ACCESS(double, c.attack.kappa));
    t["attack.accept_margin"] = f_double(FF_ACCESS(double, c.attack.accept_margin));
    t["attack.alpha"] = f_double(FF_ACCESS(double, c.attack.alpha));
    t["attack.alpha_illumination"] = f_double(FF_ACCESS(double, c.attack.alpha_illumination));
    t["attack.init_noise"] = f_double(FF_ACCESS(double, c.attack.init_noise));
    t["attack.transform_samples"] = f_int(FF_ACCESS(int, c.attack.transform_samples));
    t["attack.transforms.theta_x"] = f_double(FF_ACCESS(double, c.attack.transforms.theta_x));
    t["attack.transforms.theta_y"] = f_double(FF_ACCESS(double, c.attack.transforms.theta_y));
    t["attack.transforms.theta_z"] = f_double(FF_ACCESS(double, c.attack.transforms.theta_z));
    t["attack.transforms.eta_x"] = f_double(FF_ACCESS(double, c.attack.transforms.eta_x));
    t["attack.transforms.eta_y"] = f_double(FF_ACCESS(double, c.attack.transforms.eta_y));
    t["attack.transforms.sigma_angle"] = f_double(FF_ACCESS(double, c.attack.transforms.sigma_angle));
    t["attack.transforms.sigma_translation"] = f_double(FF_ACCESS(double, c.attack.transforms.sigma_translation));
    t["attack.lambda1"] = f_double(FF_ACCESS(double, c.attack.lambda1));
    t["attack.lambda2"] = f_double(FF_ACCESS(double, c.attack.lambda2));
    t["attack.direction_constraint"] = f_bool(FF_ACCESS(bool, c.attack.direction_constraint));
    t["attack.renormalize_in_loop"] = f_bool(FF_ACCESS(bool, c.attack.renormalize_in_loop));
    t["attack.tiv"] = f_bool(FF_ACCESS(bool, c.attack.tiv));
    t["attack.distance"] = f_enum<DistanceKind>(FF_ACCESS(DistanceKind, c.attack.distance), parse_distance,
                                                distance_name);
    t["attack.sensitivity_width"] = f_double(FF_ACCESS(double, c.attack.sensitivity_width));
    t["attack.sensitivity_radius"] = f_int(FF_ACCESS(int, c.attack.sensitivity_radius));
    t["attack.abort_checks"] = f_int(FF_ACCESS(int, c.attack.abort_checks));
    t["attack.assumed_gamma"] = f_opt_double(FF_ACCESS(std::optional<double>, c.attack.assumed_gamma));
    t["attack.verify_noise"] = f_double(FF_ACCESS(double, c.attack.verify_noise));
    t["attack.illumination_accept_margin"] = f_double(FF_ACCESS(double, c.attack.illumination_accept_margin));
    t["attack.surrogate_rho"] = f_double(FF_ACCESS(double, c.attack.surrogate_rho));
    t["attack.background_sigma"] = f_double(FF_ACCESS(double, c.attack.background_sigma));
    // Evaluation.
    t["eval.instances"] = f_int(FF_ACCESS(int, c.eval.instances));
    t["eval.expression"] = f_int(FF_ACCESS(int, c.eval.expression));
    t["eval.modes"] = f_string(FF_ACCESS(std::string, c.eval.modes));
    t["eval.transform_samples"] = f_int(FF_ACCESS(int, c.eval.transform_samples));
    t["eval.transform_sigma_deg"] = f_double(FF_ACCESS(double, c.eval.transform_sigma_deg));
    t["eval.transform_translation"] = f_double(FF_ACCESS(double, c.eval.transform_translation));
    t["eval.rotation_samples"] = f_int(FF_ACCESS(int, c.eval.rotation_samples));
    t["eval.rotation_range_deg"] = f_double(FF_ACCESS(double, c.eval.rotation_range_deg));
    t["eval.target_seed"] = f_u64(FF_ACCESS(std::uint64_t, c.eval.target_seed));
    return t;
  }();
  return table;
}

#undef FF_ACCESS

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::Parse, "line " + std::to_string(number) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Parse, "line " + std::to_string(number) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::Parse, "line " + std::to_string(number) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  try {
    it->second.set(config, value);
  } catch (const BadValue&) {
    throw Error(ErrorCode::InvalidConfig, "bad value '" + value + "' for key '" + key + "'");
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, "key '" + key + "': " + e.what());
  }
  if (key == "rig.camera_width") config.faces.face.width = config.faces.rig.camera_width;
  if (key == "rig.camera_height") config.faces.face.height = config.faces.rig.camera_height;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "override '" + o + "' is not key=value");
    apply_setting(config, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c;
  for (const auto& [k, v] : parse_config_text(read_text(path))) apply_setting(c, k, v);
  return c;
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& kv : fields()) keys.push_back(kv.first);
  return keys;
}

std::uint64_t config_hash(const RunConfig& config) {
  RunConfig c = config;
  c.seed = 0;
  return fnv1a(render_config(c));
}

std::vector<AttackMode> eval_modes(const RunConfig& config) {
  std::vector<AttackMode> modes;
  std::stringstream ss(config.eval.modes);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) modes.push_back(parse_mode(item));
  }
  if (modes.empty()) throw Error(ErrorCode::InvalidConfig, "eval.modes is empty");
  return modes;
}

int attack_expression(const RunConfig& config) {
  return config.eval.expression >= 0 ? config.eval.expression : config.faces.expressions;
}

}  // namespace fringeforge
