#ifndef MMV_FFI_H
#define MMV_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmvChannelKind {
  MMV_CHANNEL_KIND_AWGN = 0,
  MMV_CHANNEL_KIND_LOGISTIC = 1,
} MmvChannelKind;

typedef enum MmvDeltaAggregation {
  MMV_DELTA_AGGREGATION_MEAN = 0,
  MMV_DELTA_AGGREGATION_SUM = 1,
} MmvDeltaAggregation;

typedef enum MmvInit {
  MMV_INIT_PRIOR = 0,
  MMV_INIT_PRIOR_TIMES_NOISE = 1,
} MmvInit;

typedef enum MmvMatrixKind {
  MMV_MATRIX_KIND_GAUSSIAN_UNIT_ROW = 0,
  MMV_MATRIX_KIND_GAUSSIAN = 1,
  MMV_MATRIX_KIND_SIGNED_BERNOULLI = 2,
} MmvMatrixKind;

typedef enum MmvPrior {
  MMV_PRIOR_BERNOULLI_GAUSSIAN = 0,
  MMV_PRIOR_BERNOULLI_BINARY = 1,
} MmvPrior;

typedef enum MmvStatus {
  MMV_STATUS_OK = 0,
  /**
   * A numeric argument is outside its domain.
   */
  MMV_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Inconsistent configuration, malformed spec text or I/O failure.
   */
  MMV_STATUS_SPEC_ERROR = 2,
  /**
   * A numerical routine missed its tolerance.
   */
  MMV_STATUS_NUMERIC_ERROR = 3,
  /**
   * GAMP produced a non-finite or nonpositive quantity.
   */
  MMV_STATUS_DIVERGED = 4,
  MMV_STATUS_NULL_POINTER = 5,
  /**
   * Output buffer too small; the required length is in the message.
   */
  MMV_STATUS_BUFFER_TOO_SMALL = 6,
  MMV_STATUS_PANIC = 7,
  MMV_STATUS_INTERNAL = 8,
} MmvStatus;

/**
 * Converged GAMP state.
 */
typedef struct MmvGampResult MmvGampResult;

/**
 * Generated signal, matrices and observations.
 */
typedef struct MmvInstance MmvInstance;

/**
 * Sigmoid approximation used by logistic channels.
 */
typedef struct MmvMixture MmvMixture;

/**
 * Output-channel kernel values.
 */
typedef struct MmvGout {
  double g;
  double r;
  double posterior_mean_w;
  double posterior_var_w;
  bool saturated;
} MmvGout;

/**
 * A theoretic limit. Fields that do not apply are NaN.
 */
typedef struct MmvLimit {
  double value;
  double p_false_alarm;
  double p_miss;
  double std_err;
} MmvLimit;

typedef struct MmvInstanceConfig {
  size_t n;
  size_t j;
  double rate;
  double rho;
  enum MmvPrior prior;
  enum MmvMatrixKind matrix;
  enum MmvChannelKind channel;
  /**
   * `Δ_z` for AWGN, the scale `a` for logistic channels.
   */
  double noise_param;
} MmvInstanceConfig;

typedef struct MmvGampConfig {
  size_t t_max;
  double epsilon;
  enum MmvDeltaAggregation delta_aggregation;
  double damping;
  enum MmvInit init;
} MmvGampConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * excluding the terminator. Pass `len = 0` to query the length.
 */
size_t mmv_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mmv_version(void);

enum MmvStatus mmv_gout_awgn(double k, double y, double theta, double delta_z, struct MmvGout *out);

/**
 * Builds a sigmoid mixture with `components` terms.
 */
enum MmvStatus mmv_mixture_new(size_t components, struct MmvMixture **out);

/**
 * Handle to the shared default mixture; release with `mmv_mixture_free`.
 */
enum MmvStatus mmv_mixture_standard(struct MmvMixture **out);

void mmv_mixture_free(struct MmvMixture *mixture);

/**
 * Sup-norm error of the mixture against the logistic function.
 */
enum MmvStatus mmv_mixture_fit_error(const struct MmvMixture *mixture, double *out);

enum MmvStatus mmv_gout_logistic(double k,
                                 double y,
                                 double theta,
                                 double a,
                                 const struct MmvMixture *mixture,
                                 struct MmvGout *out);

/**
 * Posterior mean and variance of one Bernoulli–Gaussian super-symbol of
 * length `j`. `pi` (optional) receives the activity probability.
 */
enum MmvStatus mmv_bg_denoise(double delta_v,
                              const double *q,
                              size_t j,
                              double rho,
                              double *mean,
                              double *var,
                              double *pi);

/**
 * Same as [`mmv_bg_denoise`] for the `{0, 1}` prior.
 */
enum MmvStatus mmv_bernoulli_denoise(double delta_v,
                                     const double *q,
                                     size_t j,
                                     double rho,
                                     double *mean,
                                     double *var,
                                     double *pi);

enum MmvStatus mmv_mmwse(double delta_v, double rho, size_t j, double beta, struct MmvLimit *out);

enum MmvStatus mmv_mmhd(double delta_v, double rho, size_t j, struct MmvLimit *out);

/**
 * Monte Carlo MMAE; `std_err` is filled.
 */
enum MmvStatus mmv_mmae(double delta_v,
                        double rho,
                        size_t j,
                        size_t n_samples,
                        uint64_t seed,
                        struct MmvLimit *out);

/**
 * MMSE per super-symbol at scalar-channel variance `delta_v`.
 */
enum MmvStatus mmv_mmse_of_delta(double delta_v, double rho, size_t j, double *out);

/**
 * `delta_v` with `mmse_of_delta(delta_v) = target`. `saturated` (optional)
 * reports that the search hit its range limit.
 */
enum MmvStatus mmv_invert_mmse(double target,
                               double rho,
                               size_t j,
                               double *delta_v,
                               bool *saturated);

enum MmvStatus mmv_state_evolution_delta(double rate,
                                         double rho,
                                         size_t j,
                                         double delta_z,
                                         double *out);

enum MmvStatus mmv_instance_generate(const struct MmvInstanceConfig *config,
                                     uint64_t seed,
                                     struct MmvInstance **out);

void mmv_instance_free(struct MmvInstance *instance);

/**
 * Signal length `n`, measurements per channel `m` and channel count `j`.
 * Any output pointer may be NULL.
 */
enum MmvStatus mmv_instance_dims(const struct MmvInstance *instance,
                                 size_t *n,
                                 size_t *m,
                                 size_t *j);

/**
 * Copies the true `N × J` signal (row-major) into `buf`.
 */
enum MmvStatus mmv_instance_signal(const struct MmvInstance *instance, double *buf, size_t len);

enum MmvStatus mmv_gamp_config_default(struct MmvGampConfig *out);

/**
 * Runs GAMP on `instance` using the prior the instance was generated from.
 * `config` may be NULL for defaults.
 */
enum MmvStatus mmv_gamp_run(const struct MmvInstance *instance,
                            const struct MmvGampConfig *config,
                            struct MmvGampResult **out);

void mmv_gamp_result_free(struct MmvGampResult *result);

/**
 * Final scalar-channel variance, iteration count and convergence flag. Any
 * output pointer may be NULL.
 */
enum MmvStatus mmv_gamp_result_summary(const struct MmvGampResult *result,
                                       double *delta_v,
                                       size_t *iterations,
                                       bool *converged);

/**
 * Copies the `N × J` posterior means (row-major).
 */
enum MmvStatus mmv_gamp_result_x_hat(const struct MmvGampResult *result, double *buf, size_t len);

/**
 * Copies the `N × J` pseudo data (row-major).
 */
enum MmvStatus mmv_gamp_result_q(const struct MmvGampResult *result, double *buf, size_t len);

/**
 * Metric-optimal estimate from a GAMP result, written as an `N × J`
 * row-major buffer. `metric` is `"mse"`, `"mwse:beta=<b>"`, `"hamming"` or
 * `"mae"`; support estimates are written as 0/1 in every column.
 */
enum MmvStatus mmv_apply_metric(const struct MmvGampResult *result,
                                const char *metric,
                                double *buf,
                                size_t len);

/**
 * Runs the experiment described by `spec_text` (spec-file syntax) and
 * returns the CSV as a newly allocated string; release it with
 * `mmv_string_free`.
 */
enum MmvStatus mmv_run_experiment(const char *spec_text, char **csv);

void mmv_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMV_FFI_H */
