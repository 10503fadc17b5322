/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SPARSEPMM_H
#define SPARSEPMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpmStatus {
  SPM_STATUS_OK = 0,
  SPM_STATUS_INVALID_ARGUMENT = 1,
  SPM_STATUS_PARSE = 2,
  SPM_STATUS_VALIDATION = 3,
  SPM_STATUS_CONFIGURATION = 4,
  SPM_STATUS_NUMERICAL = 5,
  SPM_STATUS_DEGENERATE_SIGNAL = 6,
  SPM_STATUS_IO = 7,
  SPM_STATUS_NULL_POINTER = 8,
  SPM_STATUS_BUFFER_TOO_SMALL = 9,
  SPM_STATUS_PANIC = 10,
} SpmStatus;

// A spectra dataset.
typedef struct SpmDataset SpmDataset;

// A fitted model.
typedef struct SpmFit SpmFit;

// Ground truth of a simulated dataset.
typedef struct SpmTruth SpmTruth;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *spm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *spm_version(void);

// Releases a string returned by this library.
void spm_string_free(char *s);

// Builds a dataset from a row-major `n x p` absorbance matrix.
//
// `known_g` may be NULL; otherwise it holds `n` values with NaN marking an
// unlabeled sample. `mu_pure` may be NULL or hold `p` values.
enum SpmStatus spm_dataset_new(const double *absorbance,
                               size_t n,
                               size_t p,
                               const double *known_g,
                               const double *mu_pure,
                               struct SpmDataset **out);

// Reads a spectra CSV. `mu_pure_path` may be NULL.
enum SpmStatus spm_dataset_load_csv(const char *path,
                                    const char *mu_pure_path,
                                    struct SpmDataset **out);

// Number of samples, or 0 for NULL.
size_t spm_dataset_n(const struct SpmDataset *ds);

// Number of wavelengths, or 0 for NULL.
size_t spm_dataset_p(const struct SpmDataset *ds);

void spm_dataset_free(struct SpmDataset *ds);

// Fits at fixed penalties.
enum SpmStatus spm_fit(const struct SpmDataset *ds,
                       double lambda_g,
                       double lambda_delta,
                       double lambda_omega,
                       const char *config_toml,
                       struct SpmFit **out);

// Selects penalties by BIC and returns the selected fit. A fixed `lambda`
// in the config is ignored.
enum SpmStatus spm_tune(const struct SpmDataset *ds, const char *config_toml, struct SpmFit **out);

void spm_fit_free(struct SpmFit *fit);

// Number of samples of a fit, or 0 for NULL.
size_t spm_fit_n(const struct SpmFit *fit);

// Number of wavelengths of a fit, or 0 for NULL.
size_t spm_fit_p(const struct SpmFit *fit);

// Copies the `p` mean-shift values into `out`.
enum SpmStatus spm_fit_delta(const struct SpmFit *fit, double *out, size_t len);

// Copies the `n` adulteration levels into `out`.
enum SpmStatus spm_fit_g(const struct SpmFit *fit, double *out, size_t len);

// Copies the `p x p` precision matrix into `out`, row-major.
enum SpmStatus spm_fit_omega(const struct SpmFit *fit, double *out, size_t len);

// Writes `lambda_g`, `lambda_delta` and `lambda_omega` into `out[0..3]`.
enum SpmStatus spm_fit_lambda(const struct SpmFit *fit, double *out);

// BIC of the fit; larger is better.
enum SpmStatus spm_fit_bic(const struct SpmFit *fit, double *out);

// Unpenalized log-likelihood at the estimate.
enum SpmStatus spm_fit_loglik(const struct SpmFit *fit, double *out);

// 1 when the outer loop met its tolerance, else 0.
enum SpmStatus spm_fit_converged(const struct SpmFit *fit, int32_t *out);

// Full report as JSON. Release with `spm_string_free`.
enum SpmStatus spm_fit_to_json(const struct SpmFit *fit, char **out);

// Generates a synthetic dataset from the `simulation.*` keys of the config.
// `truth_out` may be NULL.
enum SpmStatus spm_simulate(const char *config_toml,
                            struct SpmDataset **ds_out,
                            struct SpmTruth **truth_out);

void spm_truth_free(struct SpmTruth *truth);

// Copies the `n` true adulteration levels into `out`.
enum SpmStatus spm_truth_g(const struct SpmTruth *truth, double *out, size_t len);

// Copies the `p` true mean-shift values into `out`.
enum SpmStatus spm_truth_delta(const struct SpmTruth *truth, double *out, size_t len);

// Scores a fit against the truth; writes the metrics as JSON.
// Release with `spm_string_free`.
enum SpmStatus spm_score(const struct SpmFit *fit, const struct SpmTruth *truth, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEPMM_H */
