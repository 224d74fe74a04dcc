#include "fmreg/fmreg.h"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "core/config.hpp"
#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/loss_checks.hpp"
#include "core/pipeline.hpp"
#include "core/ply.hpp"
#include "core/records.hpp"

struct fmreg_config {
  fmreg::RunConfig cfg;
};

struct fmreg_scene {
  fmreg::SceneInputs in;
};

struct fmreg_run {
  fmreg::RunOutput out;
  fmreg::RunConfig cfg;
  std::string scene_id;
  double wall_seconds = 0.0;
};

struct fmreg_report {
  fmreg::EvalReport report;
};

namespace {

thread_local std::string g_last_error;

template <class F>
fmreg_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return FMREG_OK;
  } catch (const fmreg::Error& e) {
    g_last_error = e.what();
    return static_cast<fmreg_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return FMREG_E_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) fmreg::fail(fmreg::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fmreg::fail(fmreg::ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fmreg::fail(fmreg::ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) fmreg::fail(fmreg::ErrorCode::Io, "write failed for " + path);
}

double or_nan(const std::optional<double>& v) { return v ? *v : std::numeric_limits<double>::quiet_NaN(); }

const fmreg::RegistrationRecord& record_at(const fmreg_run* run, size_t index) {
  need(run, "run");
  if (index >= run->out.records.size())
    fmreg::fail(fmreg::ErrorCode::InvalidArgument, "record index " + std::to_string(index) + " out of range");
  return run->out.records[index];
}

}  // namespace

extern "C" {

const char* fmreg_last_error(void) { return g_last_error.c_str(); }

const char* fmreg_status_name(fmreg_status status) {
  switch (status) {
    case FMREG_OK: return "ok";
    case FMREG_E_INVALID_ARGUMENT: return "invalid argument";
    case FMREG_E_IO: return "i/o error";
    case FMREG_E_PARSE: return "parse error";
    case FMREG_E_DEGENERATE: return "degenerate input";
    case FMREG_E_INVARIANT: return "invariant violation";
    case FMREG_E_REGISTRATION_FAILED: return "registration failed";
    case FMREG_E_CHECK_FAILED: return "check failed";
    case FMREG_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* fmreg_version(void) { return "0.1.0"; }

void fmreg_string_free(char* s) { std::free(s); }

fmreg_status fmreg_config_load(const char* text, const char* origin, const char* profile, fmreg_config** out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    auto cfg = fmreg::load_config(text ? text : "", origin ? origin : "<config>", profile ? profile : "", {});
    *out = new fmreg_config{std::move(cfg)};
  });
}

fmreg_status fmreg_config_load_file(const char* path, const char* profile, fmreg_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto cfg = fmreg::load_config(read_text(path), path, profile ? profile : "", {});
    *out = new fmreg_config{std::move(cfg)};
  });
}

void fmreg_config_free(fmreg_config* config) { delete config; }

fmreg_status fmreg_config_set(fmreg_config* config, const char* key, const char* value) {
  return guard([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    fmreg::RunConfig next = config->cfg;
    next.set(key, value);
    config->cfg = std::move(next);
  });
}

fmreg_status fmreg_config_get(const fmreg_config* config, const char* key, char** value) {
  return guard([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    *value = dup_string(config->cfg.get(key));
  });
}

fmreg_status fmreg_config_validate(const fmreg_config* config) {
  return guard([&] {
    need(config, "config");
    config->cfg.validate();
  });
}

fmreg_status fmreg_config_echo(const fmreg_config* config, char** text) {
  return guard([&] {
    need(config, "config");
    need(text, "text");
    *text = dup_string(config->cfg.echo());
  });
}

fmreg_status fmreg_config_keys(char** text) {
  return guard([&] {
    need(text, "text");
    std::string s;
    for (const auto& k : fmreg::RunConfig::keys()) s += k + "\n";
    *text = dup_string(s);
  });
}

void fmreg_gen_options_init(fmreg_gen_options* options) {
  if (!options) return;
  options->instances = -1;
  options->occlusion = -1.0;
  options->clutter_fraction = -1.0;
  options->noise_sigma = -1.0;
  options->seed = 0;
  options->scene_id = nullptr;
}

fmreg_status fmreg_scene_generate(const fmreg_config* config, const fmreg_gen_options* options, fmreg_scene** out) {
  return guard([&] {
    need(config, "config");
    need(options, "options");
    need(out, "out");
    *out = nullptr;
    config->cfg.validate();
    fmreg::GenerateOptions go;
    if (options->instances >= 0) go.instances = static_cast<std::size_t>(options->instances);
    if (options->occlusion >= 0.0) go.occlusion = options->occlusion;
    if (options->clutter_fraction >= 0.0) go.clutter_fraction = options->clutter_fraction;
    if (options->noise_sigma >= 0.0) go.noise_sigma = options->noise_sigma;
    go.seed = options->seed;
    if (options->scene_id) go.scene_id = options->scene_id;
    auto g = fmreg::generate_scene(config->cfg.scene, go);
    auto* s = new fmreg_scene;
    s->in.scene_id = g.scene.truth.scene_id;
    s->in.scene = std::move(g.scene.cloud);
    s->in.model = std::move(g.model);
    s->in.truth = std::move(g.scene.truth);
    *out = s;
  });
}

fmreg_status fmreg_scene_load(const fmreg_config* config, fmreg_scene** out) {
  return guard([&] {
    need(config, "config");
    need(out, "out");
    *out = nullptr;
    *out = new fmreg_scene{fmreg::load_scene_inputs(config->cfg)};
  });
}

void fmreg_scene_free(fmreg_scene* scene) { delete scene; }

const char* fmreg_scene_id(const fmreg_scene* scene) { return scene ? scene->in.scene_id.c_str() : ""; }

size_t fmreg_scene_point_count(const fmreg_scene* scene) { return scene ? scene->in.scene.size() : 0; }

size_t fmreg_scene_model_point_count(const fmreg_scene* scene) { return scene ? scene->in.model.size() : 0; }

size_t fmreg_scene_instance_count(const fmreg_scene* scene) {
  return scene && scene->in.truth ? scene->in.truth->instances.size() : 0;
}

int fmreg_scene_has_truth(const fmreg_scene* scene) { return scene && scene->in.truth ? 1 : 0; }

fmreg_status fmreg_scene_copy_points(const fmreg_scene* scene, double* dst, size_t capacity) {
  return guard([&] {
    need(scene, "scene");
    const auto& pts = scene->in.scene.points;
    if (pts.empty()) return;
    need(dst, "dst");
    if (capacity < 3 * pts.size())
      fmreg::fail(fmreg::ErrorCode::InvalidArgument,
                  "capacity " + std::to_string(capacity) + " < " + std::to_string(3 * pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (int k = 0; k < 3; ++k) dst[3 * i + k] = pts[i][k];
  });
}

fmreg_status fmreg_scene_write(const fmreg_scene* scene, const char* dir) {
  return guard([&] {
    need(scene, "scene");
    need(dir, "dir");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fmreg::fail(fmreg::ErrorCode::Io, std::string("cannot create ") + dir + ": " + ec.message());
    const fs::path base(dir);
    fmreg::write_ply((base / (scene->in.scene_id + ".ply")).string(), scene->in.scene);
    fmreg::PointCloud model;
    model.points = scene->in.model;
    fmreg::write_ply((base / "model.ply").string(), model);
    if (scene->in.truth) fmreg::emit_manifest(*scene->in.truth, (base / (scene->in.scene_id + ".manifest.json")).string());
  });
}

fmreg_status fmreg_register(const fmreg_config* config, const fmreg_scene* scene, fmreg_run** out) {
  return guard([&] {
    need(config, "config");
    need(scene, "scene");
    need(out, "out");
    *out = nullptr;
    config->cfg.validate();
    const auto weights = fmreg::NetworkWeights::load(config->cfg.io);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = fmreg::run_registration(scene->in, config->cfg, weights);
    const auto t1 = std::chrono::steady_clock::now();
    auto* run = new fmreg_run;
    run->out = std::move(result);
    run->cfg = config->cfg;
    run->scene_id = scene->in.scene_id;
    run->wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    *out = run;
  });
}

void fmreg_run_free(fmreg_run* run) { delete run; }

size_t fmreg_run_record_count(const fmreg_run* run) { return run ? run->out.records.size() : 0; }

size_t fmreg_run_failed_count(const fmreg_run* run) {
  if (!run) return 0;
  size_t n = 0;
  for (const auto& r : run->out.records) n += r.failed ? 1 : 0;
  return n;
}

fmreg_status fmreg_run_record_pose(const fmreg_run* run, size_t index, double* R, double* t, int* failed) {
  return guard([&] {
    const auto& rec = record_at(run, index);
    if (R)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) R[3 * i + j] = rec.pose.R(i, j);
    if (t)
      for (int i = 0; i < 3; ++i) t[i] = rec.pose.t[i];
    if (failed) *failed = rec.failed ? 1 : 0;
  });
}

const char* fmreg_run_record_diagnostic(const fmreg_run* run, size_t index) {
  if (!run || index >= run->out.records.size()) return "";
  return run->out.records[index].diagnostic.c_str();
}

double fmreg_run_wall_seconds(const fmreg_run* run) { return run ? run->wall_seconds : 0.0; }

fmreg_status fmreg_run_jsonl(const fmreg_run* run, char** text) {
  return guard([&] {
    need(run, "run");
    need(text, "text");
    std::ostringstream ss;
    fmreg::write_records(ss, run->out.records);
    *text = dup_string(ss.str());
  });
}

fmreg_status fmreg_run_write_jsonl(const fmreg_run* run, const char* path) {
  return guard([&] {
    need(run, "run");
    need(path, "path");
    std::ostringstream ss;
    fmreg::write_records(ss, run->out.records);
    write_text(path, ss.str());
  });
}

fmreg_status fmreg_run_write_proposals(const fmreg_run* run, const char* dir) {
  return guard([&] {
    need(run, "run");
    need(dir, "dir");
    fmreg::write_proposal_dump(dir, run->scene_id, run->out.proposals);
  });
}

fmreg_status fmreg_run_metadata(const fmreg_run* run, char** json) {
  return guard([&] {
    need(run, "run");
    need(json, "json");
    nlohmann::ordered_json j;
    j["scene_id"] = run->scene_id;
    j["seed"] = run->cfg.seed;
    j["threads"] = run->cfg.threads;
    j["records"] = run->out.records.size();
    j["failed"] = fmreg_run_failed_count(run);
    j["dense_scene_points"] = run->out.dense_scene_points;
    j["dense_model_points"] = run->out.dense_model_points;
    j["wall_time_s"] = run->wall_seconds;
    j["config"] = run->cfg.echo();
    *json = dup_string(j.dump(2) + "\n");
  });
}

fmreg_status fmreg_evaluate_files(const fmreg_config* config, const char* const* manifest_paths, size_t manifest_count,
                                  const char* const* records_paths, size_t records_count, fmreg_report** out) {
  return guard([&] {
    need(config, "config");
    if (records_count > 0) need(records_paths, "records_paths");
    need(out, "out");
    *out = nullptr;
    if (manifest_count > 0) need(manifest_paths, "manifest_paths");
    std::vector<fmreg::SceneGroundTruth> truths;
    for (size_t i = 0; i < manifest_count; ++i) {
      need(manifest_paths[i], "manifest path");
      truths.push_back(fmreg::load_manifest(manifest_paths[i]));
    }
    std::vector<fmreg::RegistrationRecord> records;
    for (size_t i = 0; i < records_count; ++i) {
      need(records_paths[i], "records path");
      auto part = fmreg::read_records(std::string(records_paths[i]));
      records.insert(records.end(), part.begin(), part.end());
    }
    *out = new fmreg_report{fmreg::evaluate(truths, records, config->cfg.resolved_thresholds())};
  });
}

void fmreg_report_free(fmreg_report* report) { delete report; }

fmreg_status fmreg_report_summary(const fmreg_report* report, double* mr, double* mp, double* mf, double* pir) {
  return guard([&] {
    need(report, "report");
    const auto& a = report->report.aggregate;
    if (mr) *mr = or_nan(a.mr);
    if (mp) *mp = or_nan(a.mp);
    if (mf) *mf = or_nan(a.mf);
    if (pir) *pir = or_nan(a.pir);
  });
}

fmreg_status fmreg_report_json(const fmreg_report* report, char** text) {
  return guard([&] {
    need(report, "report");
    need(text, "text");
    *text = dup_string(fmreg::report_to_json(report->report));
  });
}

fmreg_status fmreg_report_csv(const fmreg_report* report, char** text) {
  return guard([&] {
    need(report, "report");
    need(text, "text");
    *text = dup_string(fmreg::report_to_csv(report->report));
  });
}

fmreg_status fmreg_plot_data(const char* const* csv_paths, size_t count, char** text) {
  return guard([&] {
    need(text, "text");
    if (count > 0) need(csv_paths, "csv_paths");
    std::vector<std::string> csvs;
    for (size_t i = 0; i < count; ++i) {
      need(csv_paths[i], "csv path");
      csvs.push_back(read_text(csv_paths[i]));
    }
    *text = dup_string(fmreg::csv_to_plot_data(csvs));
  });
}

void fmreg_loss_check_options_init(fmreg_loss_check_options* options) {
  if (!options) return;
  const fmreg::LossCheckOptions d;
  options->gamma = d.gamma;
  options->step = d.step;
  options->tolerance = d.tolerance;
  options->seed = d.seed;
}

fmreg_status fmreg_check_losses(const fmreg_loss_check_options* options, int as_json, char** text, int* all_passed) {
  return guard([&] {
    need(options, "options");
    need(text, "text");
    need(all_passed, "all_passed");
    fmreg::LossCheckOptions o;
    o.gamma = options->gamma;
    o.step = options->step;
    o.tolerance = options->tolerance;
    o.seed = options->seed;
    o.validate();
    const auto rows = fmreg::run_loss_checks(o);
    bool ok = true;
    for (const auto& r : rows) ok = ok && r.passed;
    *text = dup_string(as_json ? fmreg::loss_checks_json(rows) : fmreg::loss_checks_table(rows));
    *all_passed = ok ? 1 : 0;
  });
}

}  // extern "C"
