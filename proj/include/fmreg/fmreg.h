#ifndef FMREG_FMREG_H
#define FMREG_FMREG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(FMREG_BUILDING_LIBRARY)
#    define FMREG_API __declspec(dllexport)
#  else
#    define FMREG_API __declspec(dllimport)
#  endif
#else
#  define FMREG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Values are stable. */
typedef enum fmreg_status {
  FMREG_OK = 0,
  FMREG_E_INVALID_ARGUMENT = 1,
  FMREG_E_IO = 2,
  FMREG_E_PARSE = 3,
  FMREG_E_DEGENERATE = 4,
  FMREG_E_INVARIANT = 5,
  FMREG_E_REGISTRATION_FAILED = 6,
  FMREG_E_CHECK_FAILED = 7,
  FMREG_E_INTERNAL = 8
} fmreg_status;

typedef struct fmreg_config fmreg_config;
typedef struct fmreg_scene fmreg_scene;
typedef struct fmreg_run fmreg_run;
typedef struct fmreg_report fmreg_report;

/* Message of the last failed call on this thread; "" when none. */
FMREG_API const char* fmreg_last_error(void);
FMREG_API const char* fmreg_status_name(fmreg_status status);
FMREG_API const char* fmreg_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
FMREG_API void fmreg_string_free(char* s);

/* ---- configuration ---- */

/* text may be NULL (no file). profile may be NULL or "" (file key, else default). */
FMREG_API fmreg_status fmreg_config_load(const char* text, const char* origin, const char* profile,
                                         fmreg_config** out);
FMREG_API fmreg_status fmreg_config_load_file(const char* path, const char* profile, fmreg_config** out);
FMREG_API void fmreg_config_free(fmreg_config* config);
FMREG_API fmreg_status fmreg_config_set(fmreg_config* config, const char* key, const char* value);
FMREG_API fmreg_status fmreg_config_get(const fmreg_config* config, const char* key, char** value);
FMREG_API fmreg_status fmreg_config_validate(const fmreg_config* config);
FMREG_API fmreg_status fmreg_config_echo(const fmreg_config* config, char** text);
/* Newline-separated list of every key. */
FMREG_API fmreg_status fmreg_config_keys(char** text);

/* ---- scene generation ---- */

typedef struct fmreg_gen_options {
  int64_t instances;       /* < 0: profile range */
  double occlusion;        /* < 0: profile range */
  double clutter_fraction; /* < 0: profile value */
  double noise_sigma;      /* < 0: profile value */
  uint64_t seed;
  const char* scene_id; /* NULL or "": "<profile>-<seed>" */
} fmreg_gen_options;

FMREG_API void fmreg_gen_options_init(fmreg_gen_options* options);
FMREG_API fmreg_status fmreg_scene_generate(const fmreg_config* config, const fmreg_gen_options* options,
                                            fmreg_scene** out);
/* Reads the scene, model and optional manifest named by the config's io.* keys. */
FMREG_API fmreg_status fmreg_scene_load(const fmreg_config* config, fmreg_scene** out);
FMREG_API void fmreg_scene_free(fmreg_scene* scene);
FMREG_API const char* fmreg_scene_id(const fmreg_scene* scene);
FMREG_API size_t fmreg_scene_point_count(const fmreg_scene* scene);
FMREG_API size_t fmreg_scene_model_point_count(const fmreg_scene* scene);
/* 0 when the scene carries no ground truth. */
FMREG_API size_t fmreg_scene_instance_count(const fmreg_scene* scene);
FMREG_API int fmreg_scene_has_truth(const fmreg_scene* scene);
/* Copies xyz triples of the scene points; dst holds 3 * point_count doubles. */
FMREG_API fmreg_status fmreg_scene_copy_points(const fmreg_scene* scene, double* dst, size_t capacity);
/* Writes <dir>/<id>.ply, <dir>/<id>.manifest.json and <dir>/model.ply. */
FMREG_API fmreg_status fmreg_scene_write(const fmreg_scene* scene, const char* dir);

/* ---- registration ---- */

FMREG_API fmreg_status fmreg_register(const fmreg_config* config, const fmreg_scene* scene, fmreg_run** out);
FMREG_API void fmreg_run_free(fmreg_run* run);
FMREG_API size_t fmreg_run_record_count(const fmreg_run* run);
FMREG_API size_t fmreg_run_failed_count(const fmreg_run* run);
/* R is row-major 3x3, t is 3 doubles. Either may be NULL. */
FMREG_API fmreg_status fmreg_run_record_pose(const fmreg_run* run, size_t index, double* R, double* t, int* failed);
FMREG_API const char* fmreg_run_record_diagnostic(const fmreg_run* run, size_t index);
FMREG_API double fmreg_run_wall_seconds(const fmreg_run* run);
FMREG_API fmreg_status fmreg_run_jsonl(const fmreg_run* run, char** text);
FMREG_API fmreg_status fmreg_run_write_jsonl(const fmreg_run* run, const char* path);
/* <dir>/<scene_id>.proposals.json (id, center, radius, count, file) plus one
   PLY subcloud per proposal. */
FMREG_API fmreg_status fmreg_run_write_proposals(const fmreg_run* run, const char* dir);
/* Config echo, seed, scene id, counts and wall time. */
FMREG_API fmreg_status fmreg_run_metadata(const fmreg_run* run, char** json);

/* ---- evaluation ---- */

FMREG_API fmreg_status fmreg_evaluate_files(const fmreg_config* config, const char* const* manifest_paths,
                                            size_t manifest_count, const char* const* records_paths,
                                            size_t records_count, fmreg_report** out);
FMREG_API void fmreg_report_free(fmreg_report* report);
/* Missing aggregates (undefined metrics) are reported as NaN. */
FMREG_API fmreg_status fmreg_report_summary(const fmreg_report* report, double* mr, double* mp, double* mf,
                                            double* pir);
FMREG_API fmreg_status fmreg_report_json(const fmreg_report* report, char** text);
FMREG_API fmreg_status fmreg_report_csv(const fmreg_report* report, char** text);

/* Merges report CSVs into whitespace plot data binned by occlusion. */
FMREG_API fmreg_status fmreg_plot_data(const char* const* csv_paths, size_t count, char** text);

/* ---- loss verification ---- */

typedef struct fmreg_loss_check_options {
  double gamma;
  double step;
  double tolerance;
  uint64_t seed;
} fmreg_loss_check_options;

FMREG_API void fmreg_loss_check_options_init(fmreg_loss_check_options* options);
/* as_json != 0 selects JSON output. *all_passed is set on FMREG_OK. */
FMREG_API fmreg_status fmreg_check_losses(const fmreg_loss_check_options* options, int as_json, char** text,
                                          int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
