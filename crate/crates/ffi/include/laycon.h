#ifndef LAYCON_H
#define LAYCON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_UTF8 = 2,
  LC_STATUS_CONFIG = 3,
  LC_STATUS_SIMULATION = 4,
  LC_STATUS_OUT_OF_RANGE = 5,
  LC_STATUS_IO = 6,
  LC_STATUS_PANIC = 7,
} LcStatus;

/*
 Validated run configuration.
 */
typedef struct LcConfig LcConfig;

/*
 Result of one simulation run.
 */
typedef struct LcTrajectory LcTrajectory;

/*
 Headline certificate numbers.
 */
typedef struct LcCertSummary {
  double v_bar_h;
  double lambda_e;
  double gamma_iss;
  double epsilon;
  double eps_e;
  double eps_t;
  double tau1;
  double tau2;
  double inf_gamma;
  bool all_verdicts;
} LcCertSummary;

/*
 One integration step, same columns as trajectory.csv.
 */
typedef struct LcRow {
  double t;
  double v_gr;
  double i_s;
  double i_b;
  double e_s;
  double e_b;
  double v;
  double r_v;
  double r_ib;
  double e1;
  double e2;
  double v_e;
  double gamma_v;
  double phi;
  double w;
  double d;
  double u_s;
  double u_b;
  uint8_t fallback;
} LcRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread. Valid until the next
 failing call on the same thread.
 */
const char *lc_last_error(void);

/*
 Static description of a status code.
 */
const char *lc_status_message(enum LcStatus status);

/*
 Parse and validate a JSON configuration.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LcStatus lc_config_from_json(const char *json, struct LcConfig **out);

/*
 Load and validate a JSON configuration file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LcStatus lc_config_from_file(const char *path, struct LcConfig **out);

/*
 Bundled scenario: 0 for A, 1 for B.

 # Safety
 `out` must be a valid pointer.
 */
enum LcStatus lc_config_scenario(uint32_t which, struct LcConfig **out);

/*
 Serialize a configuration back to JSON.

 # Safety
 `cfg` must come from an `lc_config_*` constructor; `out` must be valid.
 */
enum LcStatus lc_config_to_json(const struct LcConfig *cfg, char **out);

/*
 # Safety
 `cfg` must be null or a handle not yet freed.
 */
void lc_config_free(struct LcConfig *cfg);

/*
 Compute the offline certificates. `summary` and `json_out` may each be
 null when not wanted.

 # Safety
 `cfg` must be a live handle; non-null out pointers must be valid.
 */
enum LcStatus lc_certify(const struct LcConfig *cfg,
                         struct LcCertSummary *summary,
                         char **json_out);

/*
 Simulate one seed.

 # Safety
 `cfg` must be a live handle and `out` a valid pointer.
 */
enum LcStatus lc_run(const struct LcConfig *cfg, uint64_t seed, struct LcTrajectory **out);

/*
 Number of logged integration steps; 0 for a null handle.

 # Safety
 `traj` must be null or a live handle.
 */
uintptr_t lc_trajectory_len(const struct LcTrajectory *traj);

/*
 # Safety
 `traj` must be a live handle and `row` a valid pointer.
 */
enum LcStatus lc_trajectory_row(const struct LcTrajectory *traj,
                                uintptr_t index,
                                struct LcRow *row);

/*
 Summary document as JSON, same keys as summary.json.

 # Safety
 `traj` must be a live handle and `out` a valid pointer.
 */
enum LcStatus lc_trajectory_summary_json(const struct LcTrajectory *traj, char **out);

/*
 Monitor verdicts as JSON, same layout as monitor.json.

 # Safety
 `traj` must be a live handle and `out` a valid pointer.
 */
enum LcStatus lc_trajectory_monitor_json(const struct LcTrajectory *traj, char **out);

/*
 Write trajectory.csv-format output to `path`.

 # Safety
 `traj` must be a live handle and `path` a NUL-terminated string.
 */
enum LcStatus lc_trajectory_write_csv(const struct LcTrajectory *traj, const char *path);

/*
 # Safety
 `traj` must be null or a handle not yet freed.
 */
void lc_trajectory_free(struct LcTrajectory *traj);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void lc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYCON_H */
