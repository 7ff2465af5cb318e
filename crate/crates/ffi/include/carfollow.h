#ifndef CARFOLLOW_H
#define CARFOLLOW_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_IO = 3,
  CF_STATUS_FORMAT = 4,
  CF_STATUS_NUMERICAL = 5,
  CF_STATUS_BUFFER_TOO_SMALL = 6,
  CF_STATUS_PANIC = 7,
} CfStatus;

// A loaded model file.
typedef struct CfModel CfModel;

// One recorded car-following period.
typedef struct CfPeriod CfPeriod;

// A stepwise policy bound to a model.
typedef struct CfPolicy CfPolicy;

// Intelligent Driver Model parameters (SI units).
typedef struct CfIdmParams {
  double a_max;
  double a_conf;
  double v_desired;
  double beta;
  double s_jam;
  double t_headway;
} CfIdmParams;

// Follower state: own speed, leader minus follower speed, and bumper gap.
typedef struct CfState {
  double v_follow;
  double dv;
  double gap;
} CfState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cf_version(void);

// Message of the last failed call on this thread, or NULL if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *cf_last_error_message(void);

// IDM acceleration for one state, before action clamping.
enum CfStatus cf_idm_acceleration(const struct CfIdmParams *params,
                                  double v_follow,
                                  double dv,
                                  double gap,
                                  double *out_accel);

// Advances `state` by one step under acceleration `accel` (clamped to the
// action limits) with the leader reaching `v_lead_next`.
enum CfStatus cf_step_state(const struct CfState *state,
                            double accel,
                            double v_lead_next,
                            double dt,
                            struct CfState *out_state);

// Root mean square percentage error of `sim` against `obs`, both of length `n`.
enum CfStatus cf_rmspe(const double *sim, const double *obs, size_t n, double *out_value);

// Loads a model file written by the command-line tool.
enum CfStatus cf_model_load(const char *path, struct CfModel **out_model);

// Model kind (`idm`, `loess`, `nna`, `rnn`, `ddpg` or `replay`), valid while
// the model lives. NULL for a NULL model.
const char *cf_model_kind(const struct CfModel *model);

void cf_model_free(struct CfModel *model);

// Builds a period from `n` samples given column-wise. The first sample's
// follower speed, leader speed and gap form the initial state.
enum CfStatus cf_period_new(double dt,
                            const double *v_follow,
                            const double *v_lead,
                            const double *gap,
                            const double *a_follow,
                            size_t n,
                            struct CfPeriod **out_period);

// Reads a period CSV (`t,v_follow,v_lead,gap,a_follow`); the step is inferred
// from the first two timestamps.
enum CfStatus cf_period_load_csv(const char *path, struct CfPeriod **out_period);

// Number of samples in the period, 0 for NULL.
size_t cf_period_len(const struct CfPeriod *period);

void cf_period_free(struct CfPeriod *period);

// Rolls `model` out against the leader of `period`.
//
// Writes the simulated gaps and follower speeds (initial state included) to
// `out_gap` / `out_speed`, each with room for `capacity` values, and the
// number written to `out_len`. The rollout stops early at a collision, which
// is reported through `out_collided` (1) rather than as an error. If the
// buffers are too small, `out_len` receives the required length and
// `CF_STATUS_BUFFER_TOO_SMALL` is returned.
enum CfStatus cf_simulate(const struct CfModel *model,
                          const struct CfPeriod *period,
                          double *out_gap,
                          double *out_speed,
                          size_t capacity,
                          size_t *out_len,
                          int32_t *out_collided);

// Creates a stepwise policy for `model`. `period` is only consulted by the
// replay model and may be NULL otherwise. Call `cf_policy_reset` before the
// first `cf_policy_act`.
enum CfStatus cf_policy_new(const struct CfModel *model,
                            const struct CfPeriod *period,
                            struct CfPolicy **out_policy);

// Starts a new episode from `initial`.
enum CfStatus cf_policy_reset(struct CfPolicy *policy, const struct CfState *initial);

// Acceleration for `state`, clamped to the action limits.
enum CfStatus cf_policy_act(struct CfPolicy *policy,
                            const struct CfState *state,
                            double *out_accel);

void cf_policy_free(struct CfPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARFOLLOW_H */
