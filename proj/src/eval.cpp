// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace fringeforge {

using json = nlohmann::json;

int worker_count() {
  if (const char* env = std::getenv("FRINGEFORGE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<int>(n);
    throw Error(ErrorCode::InvalidConfig, "FRINGEFORGE_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

SurrogateParams surrogate_for(const RunConfig& c, const Calibration& cal) {
  SurrogateParams sp = make_surrogate(cal, c.faces.scan.fringe_count, c.reference_depth, c.faces.rig.camera_width,
                                      c.faces.rig.camera_height);
  sp.rho = c.attack.surrogate_rho;
  sp.background_sigma = c.attack.background_sigma;
  return sp;
}

}  // namespace

PointCloud scan_capture(const RunConfig& config, const Calibration& calibration, int identity, int expression) {
  const FaceSample s = face_sample(config.faces, identity, expression);
  const FringePatternSet patterns = scanner_patterns(calibration, config.faces.scan);
  if (config.scanner == ScannerKind::SingleShot) {
    return scan_face_single_shot(config.faces, s, calibration, patterns, surrogate_for(config, calibration));
  }
  return scan_face(config.faces, s, calibration, patterns);
}

Dataset build_dataset(const RunConfig& config, int threads) {
  const Calibration cal = make_desk_rig(config.faces.rig);
  const int ids = config.faces.identities, ex = config.faces.expressions;
  if (ids < 2 || ex < 1) throw Error(ErrorCode::InvalidConfig, "face set needs >= 2 identities and >= 1 expression");
  Dataset d;
  d.kind = config.architecture;
  d.classes = ids;
  for (int i = 0; i < ids; ++i) d.class_names.push_back("id" + std::to_string(i));
  const std::size_t n = static_cast<std::size_t>(ids) * ex;
  d.clouds.resize(n);
  d.labels.resize(n);
  parallel_for(n, threads, [&](std::size_t k) {
    const int i = static_cast<int>(k) / ex, e = static_cast<int>(k) % ex;
    d.clouds[k] = scan_capture(config, cal, i, e);
    d.labels[k] = i;
  });
  if (d.kind == Architecture::DepthConv) {
    for (const PointCloud& c : d.clouds)
      d.depths.push_back(cloud_to_depth(c, cal.camera, config.faces.rig.camera_width, config.faces.rig.camera_height));
  }
  return d;
}

TrainReport train_model(const RunConfig& config, int threads) {
  TrainConfig tc = config.train;
  return train(build_dataset(config, threads), tc);
}

std::vector<Instance> make_instances(const RunConfig& config, AttackMode mode, int classes) {
  if (classes < 2) throw Error(ErrorCode::InvalidConfig, "need >= 2 classes");
  const int count = std::min(config.eval.instances, std::min(config.faces.identities, classes));
  std::vector<Instance> out;
  const std::uint64_t mode_seed = derive_seed(config.seed, mode == AttackMode::Dodge ? 0xd0d : 0x1e5);
  for (int i = 0; i < count; ++i) {
    Instance inst;
    inst.index = i;
    inst.identity = i;
    inst.expression = attack_expression(config);
    inst.mode = mode;
    inst.seed = derive_seed(mode_seed, static_cast<std::uint64_t>(i));
    if (mode == AttackMode::Impersonate) {
      const std::uint64_t r = derive_seed(derive_seed(config.seed, config.eval.target_seed), static_cast<std::uint64_t>(i));
      inst.target = static_cast<int>(r % static_cast<std::uint64_t>(classes - 1));
      if (inst.target >= inst.identity) ++inst.target;
    }
    out.push_back(inst);
  }
  return out;
}

std::string AblationFlags::name() const {
  return std::string("dz") + (direction_constraint ? "1" : "0") + "-n" + (renormalize_in_loop ? "1" : "0") + "-t" +
         (tiv ? "1" : "0");
}

std::vector<AblationFlags> all_ablation_flags() {
  std::vector<AblationFlags> out;
  for (int m = 7; m >= 0; --m) out.push_back({(m & 4) != 0, (m & 2) != 0, (m & 1) != 0});
  return out;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct InstanceScene {
  SceneSurface surface;
  AttackScene scene;
  AttackConfig cfg;
};

InstanceScene prepare(const RunConfig& config, const Calibration& cal, const Instance& inst) {
  InstanceScene s;
  const FaceSample sample = face_sample(config.faces, inst.identity, inst.expression);
  s.surface = face_scene(config.faces, sample, cal);
  s.scene.scan = config.faces.scan;
  s.scene.world = face_render_options(config.faces, sample);
  s.scene.reference_depth = config.reference_depth;
  s.cfg = config.attack;
  s.cfg.mode = inst.mode;
  s.cfg.label = inst.identity;
  s.cfg.target = inst.target;
  s.cfg.seed = inst.seed;
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

PointCloud about_centroid(const PointCloud& cloud, const RigidTransform& t) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : cloud.points) c += p;
  if (cloud.size()) c /= static_cast<double>(cloud.size());
  PointCloud out = cloud;
  for (Vec3& p : out.points) p = t.rotation * (p - c) + c + t.translation;
  return out;
}

std::string group_name(const InstanceRecord& r) {
  return r.algorithm + "/" + r.shadow + "->" + r.victim + "/" + to_string(r.mode) + "/" + r.variant;
}

InstanceRecord record_from(const RunConfig& config, const Instance& inst, const AttackConfig& cfg,
                           const std::string& shadow, const std::string& variant) {
  InstanceRecord rec;
  rec.algorithm = to_string(config.algorithm);
  rec.shadow = shadow;
  rec.victim = shadow;
  rec.variant = variant;
  rec.flags = AblationFlags{cfg.direction_constraint, cfg.renormalize_in_loop, cfg.tiv}.name();
  rec.mode = inst.mode;
  rec.index = inst.index;
  rec.identity = inst.identity;
  rec.label = inst.identity;
  rec.target = inst.target;
  rec.seed = inst.seed;
  rec.group = group_name(rec);
  return rec;
}

void fill_attack_fields(InstanceRecord& rec, const AttackResult& r) {
  rec.note = r.note;
  rec.lambda = r.lambda;
  rec.final_margin = r.final_margin;
  rec.distance = r.distance;
  rec.l1 = r.l1;
  rec.l2 = r.l2;
  rec.rmse = r.rmse;
  rec.mean_distance = r.mean_distance;
  rec.max_column_shift = r.max_column_shift;
  rec.conflicts = r.conflicts;
  rec.order_changes = r.order_changes;
  rec.iterations = r.iterations_run;
  rec.surrogate_success = r.surrogate_success;
  std::vector<double> d;
  const PhaseMap& a = r.adversarial_phase;
  const PhaseMap& b = r.clean_phase;
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b.mask[i] && a.mask[i]) d.push_back(std::abs(a.values[i] - b.values[i]));
  }
  rec.median_abs_delta = median(std::move(d));
}

Verification reverify(const RunConfig& config, const InstanceScene& s, const ModelParams& victim,
                      const AttackResult& r) {
  if (config.algorithm == AlgorithmKind::PhaseShifting) {
    if (!r.patterns) throw Error(ErrorCode::InvalidConfig, "attack result lacks patterns");
    return verify_patterns(s.scene, victim, *r.patterns, s.cfg);
  }
  if (!r.illumination) throw Error(ErrorCode::InvalidConfig, "attack result lacks illumination");
  return verify_illumination(s.scene, victim, *r.illumination, s.cfg);
}

// Test-time robustness of a verified cloud.
void robustness(const RunConfig& config, const Calibration& cal, const ModelParams& victim, const AttackConfig& cfg,
                const Instance& inst, const PointCloud& cloud, InstanceRecord& rec) {
  const std::uint64_t fps = verification_fps_seed(cfg);
  const int w = config.faces.rig.camera_width, h = config.faces.rig.camera_height;
  const int target = cfg.loss_target();
  TransformParams tp;
  tp.sigma_angle = config.eval.transform_sigma_deg * kDeg;
  tp.sigma_translation = config.eval.transform_translation;
  const double radius = cloud_radius(cloud);
  int ok = 0;
  for (int k = 0; k < config.eval.transform_samples; ++k) {
    const RigidTransform t = sample_transform(tp, radius, derive_seed(inst.seed, 0x7e50 + k));
    ok += criterion_met(classify_cloud(victim, about_centroid(cloud, t), fps, cal, w, h), target, cfg.mode);
  }
  rec.transform_success = config.eval.transform_samples > 0 ? double(ok) / config.eval.transform_samples : 0.0;
  ok = 0;
  double prob = 0.0;
  const double range = config.eval.rotation_range_deg * kDeg;
  for (int k = 0; k < config.eval.rotation_samples; ++k) {
    Rng rng(derive_seed(inst.seed, 0x7070 + k));
    std::uniform_real_distribution<double> u(-range, range);
    RigidTransform t;
    const double ax = u(rng), ay = u(rng), az = u(rng);
    t.rotation = euler_xyz(ax, ay, az);
    const Logits z = classify_cloud(victim, about_centroid(cloud, t), fps, cal, w, h);
    ok += criterion_met(z, target, cfg.mode);
    prob += softmax(z)[target];
  }
  if (config.eval.rotation_samples > 0) {
    rec.rotation_success = double(ok) / config.eval.rotation_samples;
    rec.rotation_target_prob = prob / config.eval.rotation_samples;
  }
}

struct Job {
  const NamedModel* model;
  Instance instance;
};

// Attacks one instance on the shadow and evaluates it on each victim.
std::vector<InstanceRecord> run_job(const RunConfig& config, const Calibration& cal, const Job& job,
                                    const std::vector<const NamedModel*>& victims, const SweepOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  InstanceScene s = prepare(config, cal, job.instance);
  s.scene.scene = &s.surface;
  s.scene.calibration = &cal;
  const ModelParams& shadow = *job.model->model;
  std::vector<InstanceRecord> out;
  AttackResult r;
  std::string failure;
  try {
    r = config.algorithm == AlgorithmKind::PhaseShifting ? phase_shifting_attack(s.scene, shadow, s.cfg)
                                                          : phase_superposition_attack(s.scene, shadow, s.cfg);
  } catch (const Error& e) {
    failure = e.what();
  }
  for (const NamedModel* victim : victims) {
    InstanceRecord rec = record_from(config, job.instance, s.cfg, job.model->name, opt.variant);
    rec.victim = victim->name;
    rec.group = group_name(rec);
    if (!failure.empty()) {
      rec.error = true;
      rec.note = failure;
      out.push_back(rec);
      continue;
    }
    try {
      fill_attack_fields(rec, r);
      const bool white_box = victim->model == job.model->model;
      const Verification first = reverify(config, s, *victim->model, r);
      rec.success = white_box ? r.success : first.success;
      rec.reverified = white_box ? first.success : reverify(config, s, *victim->model, r).success;
      const Logits clean = white_box ? r.clean_logits
                                     : classify_cloud(*victim->model, r.clean_cloud, verification_fps_seed(s.cfg), cal,
                                                      config.faces.rig.camera_width, config.faces.rig.camera_height);
      rec.clean_correct = argmax(clean) == rec.label;
      robustness(config, cal, *victim->model, s.cfg, job.instance, first.cloud, rec);
    } catch (const Error& e) {
      rec.error = true;
      rec.success = rec.reverified = false;
      rec.note = e.what();
    }
    out.push_back(rec);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto& rec : out) rec.seconds = seconds;
  if (opt.sink && failure.empty())
    for (const auto& rec : out)
      if (rec.victim == rec.shadow) opt.sink(rec, r);
  return out;
}

std::vector<InstanceRecord> run_jobs(const RunConfig& config, const std::vector<Job>& jobs,
                                     const std::vector<std::vector<const NamedModel*>>& victims,
                                     const SweepOptions& opt) {
  const Calibration cal = make_desk_rig(config.faces.rig);
  std::vector<std::vector<InstanceRecord>> results(jobs.size());
  parallel_for(jobs.size(), opt.threads, [&](std::size_t i) { results[i] = run_job(config, cal, jobs[i], victims[i], opt); });
  std::vector<InstanceRecord> flat;
  for (auto& r : results) flat.insert(flat.end(), r.begin(), r.end());
  return flat;
}

std::vector<AttackMode> sweep_modes(const RunConfig& config, const SweepOptions& opt) {
  return opt.modes.empty() ? eval_modes(config) : opt.modes;
}

// JSON numbers cannot hold non-finite values.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double get_num(const json& j, const char* key) {
  const json& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json record_json(const InstanceRecord& r) {
  return json{{"group", r.group},
              {"algorithm", r.algorithm},
              {"shadow", r.shadow},
              {"victim", r.victim},
              {"variant", r.variant},
              {"flags", r.flags},
              {"mode", to_string(r.mode)},
              {"index", r.index},
              {"identity", r.identity},
              {"label", r.label},
              {"target", r.target},
              {"seed", r.seed},
              {"error", r.error},
              {"note", r.note},
              {"clean_correct", r.clean_correct},
              {"success", r.success},
              {"surrogate_success", r.surrogate_success},
              {"reverified", r.reverified},
              {"lambda", num(r.lambda)},
              {"final_margin", num(r.final_margin)},
              {"distance", num(r.distance)},
              {"l1", num(r.l1)},
              {"l2", num(r.l2)},
              {"median_abs_delta", num(r.median_abs_delta)},
              {"rmse", num(r.rmse)},
              {"mean_distance", num(r.mean_distance)},
              {"max_column_shift", num(r.max_column_shift)},
              {"conflicts", r.conflicts},
              {"order_changes", r.order_changes},
              {"iterations", r.iterations},
              {"transform_success", num(r.transform_success)},
              {"rotation_success", num(r.rotation_success)},
              {"rotation_target_prob", num(r.rotation_target_prob)}};
}

InstanceRecord record_of(const json& j) {
  InstanceRecord r;
  r.group = j.at("group").get<std::string>();
  r.algorithm = j.at("algorithm").get<std::string>();
  r.shadow = j.at("shadow").get<std::string>();
  r.victim = j.at("victim").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.flags = j.at("flags").get<std::string>();
  r.mode = parse_mode(j.at("mode").get<std::string>());
  r.index = j.at("index").get<int>();
  r.identity = j.at("identity").get<int>();
  r.label = j.at("label").get<int>();
  r.target = j.at("target").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.error = j.at("error").get<bool>();
  r.note = j.at("note").get<std::string>();
  r.clean_correct = j.at("clean_correct").get<bool>();
  r.success = j.at("success").get<bool>();
  r.surrogate_success = j.at("surrogate_success").get<bool>();
  r.reverified = j.at("reverified").get<bool>();
  r.lambda = get_num(j, "lambda");
  r.final_margin = get_num(j, "final_margin");
  r.distance = get_num(j, "distance");
  r.l1 = get_num(j, "l1");
  r.l2 = get_num(j, "l2");
  r.median_abs_delta = get_num(j, "median_abs_delta");
  r.rmse = get_num(j, "rmse");
  r.mean_distance = get_num(j, "mean_distance");
  r.max_column_shift = get_num(j, "max_column_shift");
  r.conflicts = j.at("conflicts").get<int>();
  r.order_changes = j.at("order_changes").get<int>();
  r.iterations = j.at("iterations").get<int>();
  r.transform_success = get_num(j, "transform_success");
  r.rotation_success = get_num(j, "rotation_success");
  r.rotation_target_prob = get_num(j, "rotation_target_prob");
  return r;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(3);
  s << v;
  return s.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

ExperimentReport run_benchmark(const RunConfig& config, const std::vector<NamedModel>& models,
                               const SweepOptions& options) {
  std::vector<Job> jobs;
  std::vector<std::vector<const NamedModel*>> victims;
  for (const NamedModel& m : models) {
    if (!m.model) throw Error(ErrorCode::InvalidConfig, "model '" + m.name + "' is missing");
    for (AttackMode mode : sweep_modes(config, options))
      for (const Instance& inst : make_instances(config, mode, m.model->classes)) {
        jobs.push_back({&m, inst});
        victims.push_back({&m});
      }
  }
  return aggregate(run_jobs(config, jobs, victims, options), config.seed, config_hash(config));
}

std::vector<ExperimentReport> ablation(const RunConfig& config, const NamedModel& model,
                                       const std::vector<AblationFlags>& flags, const SweepOptions& options) {
  std::vector<ExperimentReport> out;
  for (const AblationFlags& f : flags) {
    RunConfig c = config;
    c.attack.direction_constraint = f.direction_constraint;
    c.attack.renormalize_in_loop = f.renormalize_in_loop;
    c.attack.tiv = f.tiv;
    SweepOptions o = options;
    o.variant = f.name();
    out.push_back(run_benchmark(c, {model}, o));
  }
  return out;
}

TransferMatrix transfer_matrix(const RunConfig& config, const std::vector<NamedModel>& shadows,
                               const std::vector<NamedModel>& victims, const SweepOptions& options) {
  if (config.algorithm != AlgorithmKind::PhaseShifting) {
    throw Error(ErrorCode::InvalidConfig, "transfer matrix supports phase_shifting only");
  }
  if (shadows.empty() || victims.empty() || shadows.size() + victims.size() < 2) {
    throw Error(ErrorCode::InvalidConfig, "transfer matrix needs at least two models");
  }
  std::vector<const NamedModel*> all_victims;
  for (const NamedModel& v : victims) all_victims.push_back(&v);
  std::vector<Job> jobs;
  std::vector<std::vector<const NamedModel*>> per_job;
  for (const NamedModel& s : shadows)
    for (AttackMode mode : sweep_modes(config, options))
      for (const Instance& inst : make_instances(config, mode, s.model->classes)) {
        jobs.push_back({&s, inst});
        per_job.push_back(all_victims);
      }
  TransferMatrix m;
  m.report = aggregate(run_jobs(config, jobs, per_job, options), config.seed, config_hash(config));
  for (const NamedModel& s : shadows) m.shadows.push_back(s.name);
  for (const NamedModel& v : victims) m.victims.push_back(v.name);
  m.asr.assign(shadows.size(), std::vector<double>(victims.size(), 0.0));
  for (std::size_t a = 0; a < shadows.size(); ++a)
    for (std::size_t b = 0; b < victims.size(); ++b) {
      int n = 0, ok = 0;
      for (const InstanceRecord& r : m.report.records)
        if (r.shadow == shadows[a].name && r.victim == victims[b].name) {
          ++n;
          ok += r.success;
        }
      m.asr[a][b] = n ? double(ok) / n : 0.0;
    }
  return m;
}

std::string transfer_json(const TransferMatrix& m) {
  json j{{"shadows", m.shadows}, {"victims", m.victims}, {"asr", m.asr}};
  return j.dump(2) + "\n";
}

ExperimentReport aggregate(std::vector<InstanceRecord> records, std::uint64_t seed, std::uint64_t config_hash) {
  std::stable_sort(records.begin(), records.end(), [](const InstanceRecord& a, const InstanceRecord& b) {
    return a.group != b.group ? a.group < b.group : a.index < b.index;
  });
  ExperimentReport rep;
  rep.seed = seed;
  rep.config_hash = config_hash;
  std::map<std::string, std::vector<const InstanceRecord*>> by_group;
  for (const InstanceRecord& r : records) {
    by_group[r.group].push_back(&r);
    if (!r.error && r.success != r.reverified) rep.double_entry_ok = false;
  }
  for (const auto& [name, rs] : by_group) {
    GroupSummary g;
    g.group = name;
    g.algorithm = rs.front()->algorithm;
    g.shadow = rs.front()->shadow;
    g.victim = rs.front()->victim;
    g.variant = rs.front()->variant;
    g.flags = rs.front()->flags;
    g.mode = rs.front()->mode;
    g.instances = static_cast<int>(rs.size());
    std::vector<double> l1;
    double rmse = 0.0, md = 0.0, l1sum = 0.0, tr = 0.0, rot = 0.0, prob = 0.0;
    int valid = 0;
    for (const InstanceRecord* r : rs) {
      g.errors += r->error;
      g.successes += r->success;
      g.reverified += r->reverified;
      g.clean_correct += r->clean_correct;
      tr += r->transform_success;
      rot += r->rotation_success;
      prob += r->rotation_target_prob;
      if (r->error) continue;
      ++valid;
      rmse += r->rmse;
      md += r->mean_distance;
      l1sum += r->l1;
      l1.push_back(r->l1);
      g.max_column_shift = std::max(g.max_column_shift, r->max_column_shift);
      g.order_changes += r->order_changes;
    }
    const double n = g.instances;
    g.asr = g.successes / n;
    g.transform_asr = tr / n;
    g.rotation_asr = rot / n;
    g.rotation_target_prob = prob / n;
    if (valid) {
      g.mean_rmse = rmse / valid;
      g.mean_distance = md / valid;
      g.mean_l1 = l1sum / valid;
      g.median_l1 = median(l1);
    }
    rep.groups.push_back(g);
  }
  rep.records = std::move(records);
  return rep;
}

std::string report_json(const ExperimentReport& rep) {
  json groups = json::array();
  for (const GroupSummary& g : rep.groups) {
    groups.push_back(json{{"group", g.group},
                          {"algorithm", g.algorithm},
                          {"shadow", g.shadow},
                          {"victim", g.victim},
                          {"variant", g.variant},
                          {"flags", g.flags},
                          {"mode", to_string(g.mode)},
                          {"instances", g.instances},
                          {"errors", g.errors},
                          {"successes", g.successes},
                          {"reverified", g.reverified},
                          {"clean_correct", g.clean_correct},
                          {"asr", num(g.asr)},
                          {"transform_asr", num(g.transform_asr)},
                          {"rotation_asr", num(g.rotation_asr)},
                          {"rotation_target_prob", num(g.rotation_target_prob)},
                          {"mean_rmse", num(g.mean_rmse)},
                          {"mean_distance", num(g.mean_distance)},
                          {"mean_l1", num(g.mean_l1)},
                          {"median_l1", num(g.median_l1)},
                          {"max_column_shift", num(g.max_column_shift)},
                          {"order_changes", g.order_changes}});
  }
  json records = json::array();
  for (const InstanceRecord& r : rep.records) records.push_back(record_json(r));
  const json j{{"format", "fringeforge-report-1"},
               {"seed", rep.seed},
               {"config_hash", rep.config_hash},
               {"double_entry_ok", rep.double_entry_ok},
               {"groups", groups},
               {"records", records}};
  return j.dump(2) + "\n";
}

ExperimentReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    if (j.at("format") != "fringeforge-report-1") throw Error(ErrorCode::Parse, "not a report");
    std::vector<InstanceRecord> records;
    for (const json& r : j.at("records")) records.push_back(record_of(r));
    return aggregate(std::move(records), j.at("seed").get<std::uint64_t>(), j.at("config_hash").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("report: ") + e.what());
  }
}

std::string report_csv(const ExperimentReport& rep) {
  std::string out =
      "group,algorithm,shadow,victim,variant,flags,mode,index,label,target,error,clean_correct,success,"
      "reverified,lambda,final_margin,l1,l2,median_abs_delta,rmse,mean_distance,max_column_shift,order_changes,"
      "iterations,transform_success,rotation_success,rotation_target_prob\n";
  auto n = [](double v) {
    json j = num(v);
    return j.dump();
  };
  for (const InstanceRecord& r : rep.records) {
    out += csv_field(r.group) + "," + r.algorithm + "," + csv_field(r.shadow) + "," + csv_field(r.victim) + "," +
           csv_field(r.variant) + "," + r.flags + "," + to_string(r.mode) + "," + std::to_string(r.index) + "," +
           std::to_string(r.label) + "," + std::to_string(r.target) + "," + (r.error ? "1" : "0") + "," +
           (r.clean_correct ? "1" : "0") + "," + (r.success ? "1" : "0") + "," + (r.reverified ? "1" : "0") + "," +
           n(r.lambda) + "," + n(r.final_margin) + "," + n(r.l1) + "," + n(r.l2) + "," + n(r.median_abs_delta) + "," +
           n(r.rmse) + "," + n(r.mean_distance) + "," + n(r.max_column_shift) + "," + std::to_string(r.order_changes) +
           "," + std::to_string(r.iterations) + "," + n(r.transform_success) + "," + n(r.rotation_success) + "," +
           n(r.rotation_target_prob) + "\n";
  }
  return out;
}

std::string report_table(const ExperimentReport& rep) {
  std::string out =
      "| group | n | ASR | re-verified | transform ASR | rotation ASR | RMSE x10 | mean L1 | median L1 |\n"
      "|---|---|---|---|---|---|---|---|---|\n";
  for (const GroupSummary& g : rep.groups) {
    out += "| " + g.group + " | " + std::to_string(g.instances) + " | " + fixed(g.asr, 3) + " | " +
           std::to_string(g.reverified) + "/" + std::to_string(g.instances) + " | " + fixed(g.transform_asr, 3) + " | " +
           fixed(g.rotation_asr, 3) + " | " + sci(10.0 * g.mean_rmse) + " | " + fixed(g.mean_l1, 2) + " | " +
           fixed(g.median_l1, 2) + " |\n";
  }
  return out;
}

std::string timing_json(const ExperimentReport& rep) {
  json rows = json::array();
  double total = 0.0;
  for (const InstanceRecord& r : rep.records) {
    rows.push_back(json{{"group", r.group}, {"index", r.index}, {"seconds", r.seconds}});
    total += r.seconds;
  }
  return json{{"records", rows}, {"total_seconds", total}}.dump(2) + "\n";
}

}  // namespace fringeforge
