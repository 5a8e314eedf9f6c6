// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

// fringeforge: scene generation, training, attacks, evaluation sweeps and
// artifact export. Exit codes: 0 ok, 1 config/IO error, 2 partial failure.

#include "fringeforge/config.hpp"
#include "fringeforge/eval.hpp"
#include "fringeforge/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>

namespace ff = fringeforge;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartial = 2;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "key = value config file (dotted keys, [section] headers)");
  cmd->add_option("-s,--set", o.overrides, "override one config key, e.g. attack.kappa=10 (repeatable)");
}

ff::RunConfig resolve(const CommonOptions& o) {
  ff::RunConfig c = o.config_file.empty() ? ff::RunConfig{} : ff::load_config(o.config_file);
  ff::apply_overrides(c, o.overrides);
  return c;
}

void echo_config(const fs::path& dir, const ff::RunConfig& c) { ff::write_text(dir / "config.txt", ff::render_config(c)); }

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json logits_json(const ff::Logits& z) {
  json a = json::array();
  for (Eigen::Index i = 0; i < z.size(); ++i) a.push_back(z[i]);
  return a;
}

std::string csv_number(double v) { return json(std::isfinite(v) ? json(v) : json(nullptr)).dump(); }

// Everything needed to inspect or replay one attack.
void write_attack_dir(const fs::path& dir, const ff::AttackResult& r, const std::string& algorithm,
                      bool save_patterns) {
  json meta{{"algorithm", algorithm},
            {"mode", ff::to_string(r.mode)},
            {"label", r.label},
            {"target", r.target},
            {"success", r.success},
            {"surrogate_success", r.surrogate_success},
            {"lambda", r.lambda},
            {"final_margin", r.final_margin},
            {"distance", r.distance},
            {"l1", r.l1},
            {"l2", r.l2},
            {"rmse", r.rmse},
            {"mean_distance", r.mean_distance},
            {"iterations", r.iterations_run},
            {"conflicts", r.conflicts},
            {"max_column_shift", r.max_column_shift},
            {"order_changes", r.order_changes},
            {"note", r.note},
            {"logits", logits_json(r.logits)},
            {"clean_logits", logits_json(r.clean_logits)}};
  ff::write_text(dir / "metadata.json", meta.dump(2) + "\n");

  std::string trace = "lambda,iteration,adv_loss,distance,total,margin\n";
  for (const ff::TraceRow& t : r.trace) {
    trace += csv_number(t.lambda) + "," + std::to_string(t.iteration) + "," + csv_number(t.adv_loss) + "," +
             csv_number(t.distance) + "," + csv_number(t.total) + "," + csv_number(t.margin) + "\n";
  }
  ff::write_text(dir / "trace.csv", trace);
  std::string search = "lambda,surrogate_success,success,distance\n";
  for (const ff::LambdaStep& s : r.search) {
    search += csv_number(s.lambda) + "," + (s.surrogate_success ? "1" : "0") + "," + (s.success ? "1" : "0") + "," +
              csv_number(s.distance) + "\n";
  }
  ff::write_text(dir / "search.csv", search);

  ff::write_phase_map(dir / "clean_phase.bin", r.clean_phase);
  ff::write_phase_map(dir / "adversarial_phase.bin", r.adversarial_phase);
  ff::write_ply(dir / "clean.ply", r.clean_cloud);
  ff::write_ply(dir / "adversarial.ply", r.adversarial_cloud);

  // Phase offset preview: 0.5 is no change, full scale is +-2 pi.
  ff::Image offset(r.clean_phase.width, r.clean_phase.height, 0.5);
  for (std::size_t i = 0; i < offset.size(); ++i) {
    if (r.clean_phase.mask[i] && r.adversarial_phase.mask[i]) {
      offset[i] = 0.5 + (r.adversarial_phase.values[i] - r.clean_phase.values[i]) / (4.0 * std::numbers::pi);
    }
  }
  ff::write_pgm16(dir / "phase_offset.pgm", offset);
  if (r.illumination) ff::write_pgm16(dir / "illumination.pgm", *r.illumination);
  if (save_patterns && r.patterns) {
    const ff::FringePatternSet& p = *r.patterns;
    for (std::size_t k = 0; k < p.shift_patterns.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "shift_%02zu.pgm", k);
      ff::write_pgm16(dir / "patterns" / name, p.shift_patterns[k].materialize());
    }
  }
}

// ---------------------------------------------------------------------------

int cmd_scene(const CommonOptions& o, int count, std::int64_t seed, const fs::path& out) {
  ff::RunConfig c = resolve(o);
  if (seed >= 0) c.faces.seed = static_cast<std::uint64_t>(seed);
  if (count < 0) count = c.faces.identities;
  const ff::Calibration cal = ff::make_desk_rig(c.faces.rig);
  fs::create_directories(out);
  echo_config(out, c);
  ff::write_text(out / "calibration.json", ff::calibration_to_json(cal));
  json entries = json::array();
  std::vector<ff::SceneSurface> scenes(count);
  std::vector<ff::FaceSample> samples(count);
  const int expression = ff::attack_expression(c);
  ff::parallel_for(count, ff::worker_count(), [&](std::size_t i) {
    samples[i] = ff::face_sample(c.faces, static_cast<int>(i), expression);
    scenes[i] = ff::face_scene(c.faces, samples[i], cal);
  });
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    ff::write_scene(out / name, scenes[i]);
    entries.push_back(json{{"index", i},
                           {"identity_seed", samples[i].identity_seed},
                           {"expression", expression},
                           {"expression_seed", samples[i].expression_seed},
                           {"dir", name}});
  }
  const json manifest{{"count", count}, {"seed", c.faces.seed}, {"config_hash", hex(ff::config_hash(c))},
                      {"entries", entries}};
  ff::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << count << " scenes to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const CommonOptions& o, const fs::path& out) {
  const ff::RunConfig c = resolve(o);
  fs::create_directories(out);
  echo_config(out, c);
  const ff::TrainReport r = ff::train_model(c, ff::worker_count());
  ff::save_model(out / "model.ffm", r.model);
  const json summary{{"train_accuracy", r.train_accuracy},
                     {"validation_accuracy", r.validation_accuracy},
                     {"epoch_loss", r.epoch_loss},
                     {"classes", r.model.classes},
                     {"architecture", ff::to_string(r.model.architecture)}};
  ff::write_text(out / "train.json", summary.dump(2) + "\n");
  std::cout << "validation accuracy " << r.validation_accuracy << "\n";
  return kOk;
}

int cmd_attack(const CommonOptions& o, const fs::path& model_path, const fs::path& out, int identity,
               const std::string& mode, int target, bool save_patterns) {
  ff::RunConfig c = resolve(o);
  const ff::ModelParams model = ff::load_model(model_path);
  if (!mode.empty()) c.attack.mode = ff::parse_mode(mode);
  if (identity >= 0) c.attack.label = identity;
  if (target >= 0) c.attack.target = target;
  c.attack.validate(model.classes);
  fs::create_directories(out);
  echo_config(out, c);
  const ff::Calibration cal = ff::make_desk_rig(c.faces.rig);
  const ff::FaceSample sample = ff::face_sample(c.faces, c.attack.label, ff::attack_expression(c));
  const ff::SceneSurface surface = ff::face_scene(c.faces, sample, cal);
  ff::AttackScene scene;
  scene.scene = &surface;
  scene.calibration = &cal;
  scene.scan = c.faces.scan;
  scene.world = ff::face_render_options(c.faces, sample);
  scene.reference_depth = c.reference_depth;
  const ff::AttackResult r = c.algorithm == ff::AlgorithmKind::PhaseShifting
                                 ? ff::phase_shifting_attack(scene, model, c.attack)
                                 : ff::phase_superposition_attack(scene, model, c.attack);
  write_attack_dir(out, r, ff::to_string(c.algorithm), save_patterns);
  std::cout << (r.success ? "success" : "failed") << " lambda " << r.lambda << " margin " << r.final_margin << "\n";
  return r.success ? kOk : kPartial;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  return out;
}

void write_report(const fs::path& dir, const ff::ExperimentReport& rep) {
  ff::write_text(dir / "report.json", ff::report_json(rep));
  ff::write_text(dir / "report.csv", ff::report_csv(rep));
  ff::write_text(dir / "table.md", ff::report_table(rep));
}

int report_status(const ff::ExperimentReport& rep) {
  bool errors = !rep.double_entry_ok;
  for (const auto& g : rep.groups) errors = errors || g.errors > 0;
  return errors ? kPartial : kOk;
}

int cmd_eval(const CommonOptions& o, const std::vector<std::string>& model_specs,
             const std::vector<std::string>& victim_specs, const std::string& kind, const fs::path& out,
             const fs::path& reaggregate, bool artifacts) {
  if (!reaggregate.empty()) {
    const ff::ExperimentReport rep = ff::report_from_json(ff::read_text(reaggregate / "report.json"));
    write_report(reaggregate, rep);
    std::cout << ff::report_table(rep);
    return report_status(rep);
  }
  const ff::RunConfig c = resolve(o);
  auto load_all = [](const std::vector<std::string>& specs, std::vector<ff::ModelParams>& storage) {
    std::vector<std::pair<std::string, fs::path>> named;
    for (const std::string& s : specs) {
      const auto eq = s.find('=');
      const fs::path p = eq == std::string::npos ? fs::path(s) : fs::path(s.substr(eq + 1));
      named.emplace_back(eq == std::string::npos ? p.stem().string() : s.substr(0, eq), p);
    }
    storage.reserve(named.size());
    std::vector<ff::NamedModel> models;
    for (const auto& [name, path] : named) {
      storage.push_back(ff::load_model(path));
      models.push_back({name, nullptr});
    }
    for (std::size_t i = 0; i < models.size(); ++i) models[i].model = &storage[i];
    return models;
  };
  std::vector<ff::ModelParams> shadow_store, victim_store;
  const std::vector<ff::NamedModel> models = load_all(model_specs, shadow_store);
  if (models.empty()) throw ff::Error(ff::ErrorCode::InvalidConfig, "eval needs at least one --model");

  const fs::path run = out / (hex(c.seed) + "-" + hex(ff::config_hash(c)));
  fs::create_directories(run);
  echo_config(run, c);
  ff::SweepOptions opt;
  opt.threads = ff::worker_count();
  std::mutex io_mutex;
  if (artifacts) {
    opt.sink = [&](const ff::InstanceRecord& rec, const ff::AttackResult& r) {
      const fs::path dir = run / "instances" / sanitize(rec.group) / std::to_string(rec.index);
      std::lock_guard lock(io_mutex);
      write_attack_dir(dir, r, rec.algorithm, false);
    };
  }
  ff::ExperimentReport rep;
  if (kind == "benchmark") {
    rep = ff::run_benchmark(c, models, opt);
  } else if (kind == "ablation") {
    std::vector<ff::InstanceRecord> all;
    for (const auto& r : ff::ablation(c, models.front(), ff::all_ablation_flags(), opt))
      all.insert(all.end(), r.records.begin(), r.records.end());
    rep = ff::aggregate(std::move(all), c.seed, ff::config_hash(c));
  } else if (kind == "transfer") {
    std::vector<ff::NamedModel> victims = load_all(victim_specs, victim_store);
    if (victims.empty()) victims = models;
    const ff::TransferMatrix m = ff::transfer_matrix(c, models, victims, opt);
    ff::write_text(run / "transfer.json", ff::transfer_json(m));
    rep = m.report;
  } else {
    throw ff::Error(ff::ErrorCode::InvalidConfig, "unknown eval kind '" + kind + "'");
  }
  write_report(run, rep);
  ff::write_text(run / "timing.json", ff::timing_json(rep));
  std::cout << run.string() << "\n" << ff::report_table(rep);
  return report_status(rep);
}

void export_file(const fs::path& in, const fs::path& out_dir, const fs::path& rel) {
  const std::string ext = in.extension().string();
  fs::path target = out_dir / rel;
  if (ext == ".ply") {
    ff::write_points_csv(target.replace_extension(".csv"), ff::read_ply(in));
  } else if (ext == ".pgm") {
    ff::write_png8(target.replace_extension(".png"), ff::read_pgm16(in), 0.0, 1.0);
  } else if (ext == ".bin" && fs::exists(in.string() + ".json")) {
    ff::Mask mask;
    const ff::Image img = ff::read_image_binary(in, &mask);
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (!mask[i] || !std::isfinite(img[i])) continue;
      lo = any ? std::min(lo, img[i]) : img[i];
      hi = any ? std::max(hi, img[i]) : img[i];
      any = true;
    }
    ff::write_png8(target.replace_extension(".png"), img, lo, hi, &mask);
  }
}

int cmd_export(const fs::path& in, const fs::path& out) {
  if (!fs::exists(in)) throw ff::Error(ff::ErrorCode::Io, "no such file or directory: " + in.string());
  int n = 0;
  if (fs::is_directory(in)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(in))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      export_file(f, out, fs::relative(f, in));
      ++n;
    }
  } else {
    export_file(in, out, in.filename());
    n = 1;
  }
  std::cout << "scanned " << n << " files\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fringeforge: structured-light face scanning and optical adversarial attacks"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 configuration or IO error, 2 partial attack failures.\n"
             "Worker threads: FRINGEFORGE_THREADS (default: hardware concurrency).");

  CommonOptions scene_o, train_o, attack_o, eval_o;
  int scene_count = -1;
  std::int64_t scene_seed = -1;
  std::string scene_out;
  auto* scene = app.add_subcommand("scene", "generate face scenes and a manifest");
  add_common(scene, scene_o);
  scene->add_option("--count", scene_count, "number of identities (default faces.identities)");
  scene->add_option("--seed", scene_seed, "face set seed (default faces.seed)");
  scene->add_option("--out", scene_out, "output directory")->required();

  std::string train_out;
  auto* train = app.add_subcommand("train", "scan the face set and train a classifier");
  add_common(train, train_o);
  train->add_option("--out", train_out, "output directory")->required();

  std::string attack_model, attack_out, attack_mode;
  int attack_identity = -1, attack_target = -1;
  bool save_patterns = false;
  auto* attack = app.add_subcommand("attack", "attack one face");
  add_common(attack, attack_o);
  attack->add_option("--model", attack_model, "model file")->required();
  attack->add_option("--out", attack_out, "result directory")->required();
  attack->add_option("--identity", attack_identity, "true identity (default attack.label)");
  attack->add_option("--mode", attack_mode, "dodge | impersonate (default attack.mode)");
  attack->add_option("--target", attack_target, "impersonation target (default attack.target)");
  attack->add_flag("--save-patterns", save_patterns, "also write the adversarial shift patterns as PGM");

  std::vector<std::string> eval_models, eval_victims;
  std::string eval_kind = "benchmark", eval_out, eval_reagg;
  bool eval_artifacts = false;
  auto* eval = app.add_subcommand("eval", "evaluation sweeps: benchmark, ablation, transfer");
  add_common(eval, eval_o);
  eval->add_option("--model", eval_models, "[name=]model file (repeatable)");
  eval->add_option("--victim", eval_victims, "[name=]victim model for transfer (default: the --model list)");
  eval->add_option("--kind", eval_kind, "benchmark | ablation | transfer");
  eval->add_option("--out", eval_out, "parent of the run directory <seed>-<config hash>");
  eval->add_option("--reaggregate", eval_reagg, "rebuild report files of an existing run directory");
  eval->add_flag("--artifacts", eval_artifacts, "write per-instance attack directories");

  std::string export_in, export_out;
  auto* exp = app.add_subcommand("export", "convert PLY to CSV and PGM/phase maps to 8-bit PNG");
  exp->add_option("--in", export_in, "file or directory")->required();
  exp->add_option("--out", export_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*scene) return cmd_scene(scene_o, scene_count, scene_seed, scene_out);
    if (*train) return cmd_train(train_o, train_out);
    if (*attack) {
      return cmd_attack(attack_o, attack_model, attack_out, attack_identity, attack_mode, attack_target, save_patterns);
    }
    if (*eval) {
      if (eval_reagg.empty() && eval_out.empty()) throw ff::Error(ff::ErrorCode::InvalidConfig, "eval needs --out");
      return cmd_eval(eval_o, eval_models, eval_victims, eval_kind, eval_out, eval_reagg, eval_artifacts);
    }
    if (*exp) return cmd_export(export_in, export_out);
  } catch (const ff::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
