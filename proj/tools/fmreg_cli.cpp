#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmreg/fmreg.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;

struct CliError {
  fmreg_status status;
  std::string message;
};

int exit_code_for(fmreg_status s) {
  switch (s) {
    case FMREG_OK: return kExitOk;
    case FMREG_E_INVALID_ARGUMENT:
    case FMREG_E_IO:
    case FMREG_E_PARSE: return kExitInput;
    default: return kExitFailure;
  }
}

void check(fmreg_status s) {
  if (s != FMREG_OK) throw CliError{s, fmreg_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  fmreg_string_free(s);
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{FMREG_E_IO, "cannot write " + path};
  out << text;
  if (!out) throw CliError{FMREG_E_IO, "write failed for " + path};
}

struct Config {
  fmreg_config* h = nullptr;
  Config() = default;
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  ~Config() { fmreg_config_free(h); }
  void set(const std::string& k, const std::string& v) { check(fmreg_config_set(h, k.c_str(), v.c_str())); }
};

struct Scene {
  fmreg_scene* h = nullptr;
  Scene() = default;
  Scene(const Scene&) = delete;
  Scene& operator=(const Scene&) = delete;
  ~Scene() { fmreg_scene_free(h); }
};

struct Run {
  fmreg_run* h = nullptr;
  Run() = default;
  Run(const Run&) = delete;
  Run& operator=(const Run&) = delete;
  ~Run() { fmreg_run_free(h); }
};

struct Report {
  fmreg_report* h = nullptr;
  Report() = default;
  Report(const Report&) = delete;
  Report& operator=(const Report&) = delete;
  ~Report() { fmreg_report_free(h); }
};

// options shared by the config-driven subcommands
struct Common {
  std::string config_path;
  std::string profile;
  std::vector<std::string> sets;
  std::optional<unsigned> threads;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "TOML-style config file");
    app->add_option("--profile", profile, "dataset profile (scan2cad-like, robi-like or a file in $FMREG_PROFILE_DIR)");
    app->add_option("--set", sets, "override a config key: key=value (repeatable)");
    app->add_option("--threads", threads, "worker threads (0: available parallelism)");
    app->add_option("--seed", seed, "run seed");
  }

  void load(Config& cfg) const {
    const char* prof = profile.empty() ? nullptr : profile.c_str();
    if (config_path.empty())
      check(fmreg_config_load(nullptr, nullptr, prof, &cfg.h));
    else
      check(fmreg_config_load_file(config_path.c_str(), prof, &cfg.h));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw CliError{FMREG_E_INVALID_ARGUMENT, "--set expects key=value, got '" + kv + "'"};
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (threads) cfg.set("threads", std::to_string(*threads));
    if (seed) cfg.set("seed", std::to_string(*seed));
    check(fmreg_config_validate(cfg.h));
  }
};

std::string get(const Config& cfg, const std::string& key) {
  char* v = nullptr;
  check(fmreg_config_get(cfg.h, key.c_str(), &v));
  return take(v);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---- gen ----

struct GenArgs {
  Common common;
  std::string out_dir = ".";
  std::optional<std::int64_t> instances;
  std::optional<double> occlusion, clutter, noise;
  std::size_t count = 1;
  std::string scene_id;
};

int cmd_gen(const GenArgs& a) {
  Config cfg;
  a.common.load(cfg);
  if (a.count == 0) throw CliError{FMREG_E_INVALID_ARGUMENT, "--count must be >= 1"};
  if (a.count > 1 && !a.scene_id.empty()) throw CliError{FMREG_E_INVALID_ARGUMENT, "--id needs --count 1"};
  if (a.instances && *a.instances < 0) throw CliError{FMREG_E_INVALID_ARGUMENT, "--instances must be >= 0"};
  const std::uint64_t base = std::stoull(get(cfg, "seed"));
  for (std::size_t i = 0; i < a.count; ++i) {
    fmreg_gen_options o;
    fmreg_gen_options_init(&o);
    if (a.instances) o.instances = *a.instances;
    if (a.occlusion) o.occlusion = *a.occlusion;
    if (a.clutter) o.clutter_fraction = *a.clutter;
    if (a.noise) o.noise_sigma = *a.noise;
    o.seed = base + i;
    if (!a.scene_id.empty()) o.scene_id = a.scene_id.c_str();
    Scene s;
    check(fmreg_scene_generate(cfg.h, &o, &s.h));
    check(fmreg_scene_write(s.h, a.out_dir.c_str()));
    std::printf("%s: K=%zu points=%zu seed=%llu\n", fmreg_scene_id(s.h), fmreg_scene_instance_count(s.h),
                fmreg_scene_point_count(s.h), static_cast<unsigned long long>(o.seed));
  }
  return kExitOk;
}

// ---- register ----

struct RegisterArgs {
  Common common;
  std::vector<std::string> scenes, manifests;
  std::string model, out, dump_dir;
  bool oracle = false;
};

int cmd_register(const RegisterArgs& a) {
  Config cfg;
  a.common.load(cfg);
  if (a.oracle) {
    cfg.set("descriptor.kind", "oracle");
    cfg.set("focus.oracle", "true");
    cfg.set("match.oracle", "true");
  }
  if (!a.model.empty()) cfg.set("io.model", a.model);
  if (!a.out.empty()) cfg.set("io.out", a.out);
  std::vector<std::string> scenes = a.scenes;
  if (scenes.empty()) scenes.push_back(get(cfg, "io.scene"));
  if (scenes.size() == 1 && scenes[0].empty()) throw CliError{FMREG_E_INVALID_ARGUMENT, "no scene given (--scene or io.scene)"};
  if (!a.manifests.empty() && a.manifests.size() != scenes.size())
    throw CliError{FMREG_E_INVALID_ARGUMENT, "--manifest must be given once per --scene"};
  const std::string out = get(cfg, "io.out");
  if (out.empty()) throw CliError{FMREG_E_INVALID_ARGUMENT, "no output path given (--out or io.out)"};

  std::string jsonl;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  double wall = 0.0;
  std::size_t records = 0, failed = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    cfg.set("io.scene", scenes[i]);
    if (!a.manifests.empty()) cfg.set("io.manifest", a.manifests[i]);
    Scene s;
    check(fmreg_scene_load(cfg.h, &s.h));
    Run r;
    check(fmreg_register(cfg.h, s.h, &r.h));
    char* text = nullptr;
    check(fmreg_run_jsonl(r.h, &text));
    if (!a.dump_dir.empty()) check(fmreg_run_write_proposals(r.h, a.dump_dir.c_str()));
    jsonl += take(text);
    char* meta = nullptr;
    check(fmreg_run_metadata(r.h, &meta));
    auto m = nlohmann::ordered_json::parse(take(meta));
    m.erase("config");
    runs.push_back(m);
    wall += fmreg_run_wall_seconds(r.h);
    records += fmreg_run_record_count(r.h);
    failed += fmreg_run_failed_count(r.h);
    std::printf("%s: %zu records, %zu failed, %.2fs\n", fmreg_scene_id(s.h), fmreg_run_record_count(r.h),
                fmreg_run_failed_count(r.h), fmreg_run_wall_seconds(r.h));
    for (std::size_t k = 0; k < fmreg_run_record_count(r.h); ++k) {
      int f = 0;
      check(fmreg_run_record_pose(r.h, k, nullptr, nullptr, &f));
      if (f) std::printf("  record %zu failed: %s\n", k, fmreg_run_record_diagnostic(r.h, k));
    }
  }
  if (scenes.size() == 1 && !a.scenes.empty()) cfg.set("io.scene", scenes[0]);
  write_file(out, jsonl);

  nlohmann::ordered_json meta;
  char* echo = nullptr;
  check(fmreg_config_echo(cfg.h, &echo));
  meta["seed"] = std::stoull(get(cfg, "seed"));
  meta["scenes"] = scenes;
  meta["records"] = records;
  meta["failed"] = failed;
  meta["wall_time_s"] = wall;
  meta["runs"] = runs;
  meta["config"] = take(echo);
  write_file(out + ".meta.json", meta.dump(2) + "\n");
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::vector<std::string> manifests, records;
  std::string manifest_dir, out_json, out_csv;
};

int cmd_eval(const EvalArgs& a) {
  Config cfg;
  a.common.load(cfg);
  std::vector<std::string> manifests = a.manifests;
  if (!a.manifest_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(a.manifest_dir, ec)) {
      const auto name = e.path().filename().string();
      if (name.size() > 14 && name.ends_with(".manifest.json")) found.push_back(e.path().string());
    }
    if (ec) throw CliError{FMREG_E_IO, "cannot list " + a.manifest_dir + ": " + ec.message()};
    std::sort(found.begin(), found.end());
    manifests.insert(manifests.end(), found.begin(), found.end());
  }
  if (manifests.empty()) throw CliError{FMREG_E_INVALID_ARGUMENT, "no manifests given"};
  if (a.records.empty()) throw CliError{FMREG_E_INVALID_ARGUMENT, "no records given"};
  std::vector<const char*> mp, rp;
  for (const auto& m : manifests) mp.push_back(m.c_str());
  for (const auto& r : a.records) rp.push_back(r.c_str());
  Report rep;
  check(fmreg_evaluate_files(cfg.h, mp.data(), mp.size(), rp.data(), rp.size(), &rep.h));
  if (!a.out_json.empty()) {
    char* t = nullptr;
    check(fmreg_report_json(rep.h, &t));
    write_file(a.out_json, take(t));
  }
  if (!a.out_csv.empty()) {
    char* t = nullptr;
    check(fmreg_report_csv(rep.h, &t));
    write_file(a.out_csv, take(t));
  }
  double mr, mp_, mf, pir;
  check(fmreg_report_summary(rep.h, &mr, &mp_, &mf, &pir));
  std::printf("MR %s MP %s MF %s PIR %s\n", fmt(mr).c_str(), fmt(mp_).c_str(), fmt(mf).c_str(), fmt(pir).c_str());
  return kExitOk;
}

// ---- check-losses ----

struct LossArgs {
  fmreg_loss_check_options o{};
  bool json = false;
};

int cmd_check_losses(const LossArgs& a) {
  char* text = nullptr;
  int ok = 0;
  check(fmreg_check_losses(&a.o, a.json ? 1 : 0, &text, &ok));
  std::fputs(take(text).c_str(), stdout);
  return ok ? kExitOk : kExitFailure;
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> csvs;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  std::vector<const char*> p;
  for (const auto& c : a.csvs) p.push_back(c.c_str());
  char* text = nullptr;
  check(fmreg_plot_data(p.data(), p.size(), &text));
  const std::string data = take(text);
  if (a.out.empty())
    std::fputs(data.c_str(), stdout);
  else
    write_file(a.out, data);
  return kExitOk;
}

// ---- config ----

int cmd_config(const Common& c, bool keys) {
  if (keys) {
    char* t = nullptr;
    check(fmreg_config_keys(&t));
    std::fputs(take(t).c_str(), stdout);
    return kExitOk;
  }
  Config cfg;
  c.load(cfg);
  char* t = nullptr;
  check(fmreg_config_echo(cfg.h, &t));
  std::fputs(take(t).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-instance point cloud registration toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fmreg_version());

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate synthetic scenes (PLY + manifest + model)");
  gen.common.attach(g);
  g->add_option("--out", gen.out_dir, "output directory");
  g->add_option("--instances", gen.instances, "instance count (default: profile range)");
  g->add_option("--occlusion", gen.occlusion, "occluded fraction per instance");
  g->add_option("--clutter", gen.clutter, "clutter fraction");
  g->add_option("--noise", gen.noise, "noise sigma in meters");
  g->add_option("--count", gen.count, "number of scenes, seeds seed..seed+count-1");
  g->add_option("--id", gen.scene_id, "scene id (single scene only)");

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "register the model into one or more scenes");
  reg.common.attach(r);
  r->add_option("--scene", reg.scenes, "scene PLY (repeatable)");
  r->add_option("--manifest", reg.manifests, "scene manifest, once per scene");
  r->add_option("--model", reg.model, "model PLY");
  r->add_option("--out", reg.out, "output JSONL; metadata goes to <out>.meta.json");
  r->add_flag("--oracle", reg.oracle, "oracle descriptors, offsets and masks (needs manifests)");
  r->add_option("--dump-proposals", reg.dump_dir, "write each proposal subcloud and a JSON index here");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score registrations against manifests");
  ev.common.attach(e);
  e->add_option("--manifest", ev.manifests, "scene manifest (repeatable)");
  e->add_option("--manifest-dir", ev.manifest_dir, "directory of *.manifest.json");
  e->add_option("--records", ev.records, "registrations JSONL (repeatable)");
  e->add_option("--json", ev.out_json, "write the JSON report here");
  e->add_option("--csv", ev.out_csv, "write the CSV report here");

  LossArgs lc;
  fmreg_loss_check_options_init(&lc.o);
  auto* l = app.add_subcommand("check-losses", "verify loss values and gradients");
  l->add_option("--gamma", lc.o.gamma, "circle loss scale");
  l->add_option("--step", lc.o.step, "finite-difference step");
  l->add_option("--tolerance", lc.o.tolerance, "max relative gradient error");
  l->add_option("--seed", lc.o.seed, "seed for the random cases");
  l->add_flag("--json", lc.json, "machine-readable output");

  ReportArgs rp;
  auto* p = app.add_subcommand("report", "merge report CSVs into plot data");
  p->add_option("--csv", rp.csvs, "report CSV (repeatable)")->required();
  p->add_option("--out", rp.out, "output file (default: stdout)");

  Common cc;
  bool keys = false;
  auto* c = app.add_subcommand("config", "print the effective configuration");
  cc.attach(c);
  c->add_flag("--keys", keys, "list every key instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (r->parsed()) return cmd_register(reg);
    if (e->parsed()) return cmd_eval(ev);
    if (l->parsed()) return cmd_check_losses(lc);
    if (p->parsed()) return cmd_report(rp);
    if (c->parsed()) return cmd_config(cc, keys);
  } catch (const CliError& err) {
    std::fprintf(stderr, "error: %s\n", err.message.c_str());
    return exit_code_for(err.status);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitFailure;
  }
  return kExitInput;
}
