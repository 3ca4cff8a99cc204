#ifndef PERIOCULAR_EVAL_H
#define PERIOCULAR_EVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function.
typedef enum PeStatus {
  PE_STATUS_OK = 0,
  PE_STATUS_NULL_POINTER = 1,
  PE_STATUS_INVALID_UTF8 = 2,
  PE_STATUS_PARSE = 3,
  PE_STATUS_DIMENSION = 4,
  PE_STATUS_DUPLICATE = 5,
  PE_STATUS_DOMAIN = 6,
  PE_STATUS_USAGE = 7,
  PE_STATUS_COMPLETENESS = 8,
  PE_STATUS_LOOKUP = 9,
  PE_STATUS_ALIGNMENT = 10,
  PE_STATUS_SINGULAR = 11,
  PE_STATUS_SCORER = 12,
  PE_STATUS_DEGENERATE = 13,
  PE_STATUS_IO = 14,
  PE_STATUS_PANIC = 99,
} PeStatus;

// Comparison metric selector.
typedef enum PeMetric {
  // Cosine similarity.
  PE_METRIC_COSINE = 0,
  // Chi-square distance, returned negated so that higher means more similar.
  PE_METRIC_CHI2 = 1,
} PeMetric;

// Opaque trained fusion model.
typedef struct PeFusionModel PeFusionModel;

// Opaque set of embedding templates.
typedef struct PeTemplateSet PeTemplateSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the same
// thread.
const char *pe_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pe_version(void);

// Cosine similarity of two vectors of length `len`.
//
// # Safety
// `x` and `y` must point to `len` readable doubles; `out` must be writable.
enum PeStatus pe_cosine_similarity(const double *x, const double *y, size_t len, double *out);

// Chi-square distance of two non-negative vectors of length `len`.
//
// # Safety
// `x` and `y` must point to `len` readable doubles; `out` must be writable.
enum PeStatus pe_chi2_distance(const double *x, const double *y, size_t len, double *out);

// Equal error rate (a fraction in [0, 1]) and the threshold where it occurs.
//
// # Safety
// `genuine` and `impostor` must point to the given number of readable
// doubles; both out-pointers must be writable.
enum PeStatus pe_compute_eer(const double *genuine,
                             size_t n_genuine,
                             const double *impostor,
                             size_t n_impostor,
                             double *out_eer,
                             double *out_threshold);

// Percent change of a fused EER relative to the best individual EER.
//
// # Safety
// `out` must be writable.
enum PeStatus pe_relative_change(double fused_eer, double best_individual_eer, double *out);

// Jensen–Shannon divergence (natural log) of two non-negative maps of
// `len` cells. Each map is normalised to unit mass first.
//
// # Safety
// `p` and `q` must point to `len` readable doubles; `out` must be writable.
enum PeStatus pe_jsd(const double *p, const double *q, size_t len, double *out);

// Genuine and impostor pair counts of the full protocol for `subjects`
// subjects and `distances` acquisition distances.
//
// # Safety
// Both out-pointers must be writable.
enum PeStatus pe_protocol_counts(size_t subjects,
                                 size_t distances,
                                 uint64_t *out_genuine,
                                 uint64_t *out_impostor);

// Parses a template CSV against a manifest. On success `*out` owns a new
// handle.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
enum PeStatus pe_templates_parse(const char *manifest_text,
                                 const char *csv_text,
                                 struct PeTemplateSet **out);

// Number of templates in the set.
//
// # Safety
// `set` must be a live handle or NULL (which yields 0).
size_t pe_templates_len(const struct PeTemplateSet *set);

// Compares two templates named by file stem (`subject_s1_L_d3`).
//
// # Safety
// `set` must be a live handle; the stems must be NUL-terminated; `out` must
// be writable.
enum PeStatus pe_templates_compare(const struct PeTemplateSet *set,
                                   const char *probe,
                                   const char *gallery,
                                   enum PeMetric metric,
                                   double *out);

// Releases a template set. NULL is ignored.
//
// # Safety
// `set` must come from [`pe_templates_parse`] and not be freed twice.
void pe_templates_free(struct PeTemplateSet *set);

// Parses a fusion model in the text format written by `fuse train`.
//
// # Safety
// `text` must be NUL-terminated; `out` must be writable.
enum PeStatus pe_fusion_model_parse(const char *text, struct PeFusionModel **out);

// Builds a fusion model from a bias and `n` weights. Systems are named
// `s1`, `s2`, and so on.
//
// # Safety
// `weights` must point to `n` readable doubles; `out` must be writable.
enum PeStatus pe_fusion_model_new(double bias,
                                  const double *weights,
                                  size_t n,
                                  struct PeFusionModel **out);

// Number of systems the model expects.
//
// # Safety
// `model` must be a live handle or NULL (which yields 0).
size_t pe_fusion_model_systems(const struct PeFusionModel *model);

// Fuses `n_trials` rows of `n_systems` scores (row-major) into `out`.
//
// # Safety
// `model` must be a live handle; `scores` must hold `n_trials * n_systems`
// doubles and `out` room for `n_trials`.
enum PeStatus pe_fusion_model_apply(const struct PeFusionModel *model,
                                    const double *scores,
                                    size_t n_trials,
                                    size_t n_systems,
                                    double *out);

// Releases a fusion model. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be freed twice.
void pe_fusion_model_free(struct PeFusionModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERIOCULAR_EVAL_H */
