#ifndef CALSET_H
#define CALSET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum CalsetStatus {
  CALSET_STATUS_OK = 0,
  CALSET_STATUS_NULL_POINTER = 1,
  CALSET_STATUS_INVALID_UTF8 = 2,
  CALSET_STATUS_INVALID_ARGUMENT = 3,
  CALSET_STATUS_FAILED = 4,
  CALSET_STATUS_PANIC = 5,
} CalsetStatus;

/**
 * A pipeline run bound to a working directory and a config.
 */
typedef struct CalsetRun CalsetRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *calset_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be freed twice.
 */
void calset_string_free(char *s);

/**
 * ROUGE-n F1 of `hypothesis` against `reference`.
 *
 * # Safety
 * Strings must be nul-terminated; `out_f1` must be writable.
 */
enum CalsetStatus calset_rouge_n(const char *hypothesis,
                                 const char *reference,
                                 size_t n,
                                 double *out_f1);

/**
 * ROUGE-L F1 of `hypothesis` against `reference`.
 *
 * # Safety
 * Strings must be nul-terminated; `out_f1` must be writable.
 */
enum CalsetStatus calset_rouge_l(const char *hypothesis, const char *reference, double *out_f1);

/**
 * Extractive fragment coverage and density of `summary` against `source`.
 *
 * # Safety
 * Strings must be nul-terminated; both out-pointers must be writable.
 */
enum CalsetStatus calset_fragments(const char *source,
                                   const char *summary,
                                   double *out_coverage,
                                   double *out_density);

/**
 * Smoothed sentence BLEU of `candidate` against `reference`.
 *
 * # Safety
 * Strings must be nul-terminated; `out_bleu` must be writable.
 */
enum CalsetStatus calset_bleu(const char *candidate, const char *reference, double *out_bleu);

/**
 * Negative summed token log-probability.
 *
 * # Safety
 * `token_logprobs` must point to `len` values; `out_loss` must be writable.
 */
enum CalsetStatus calset_mle_loss(const double *token_logprobs, size_t len, double *out_loss);

/**
 * Length-normalized sequence score `tau_scale * sum(lp) / len^alpha`.
 *
 * # Safety
 * `token_logprobs` must point to `len` values; `out_score` must be writable.
 */
enum CalsetStatus calset_length_normalized_score(const double *token_logprobs,
                                                 size_t len,
                                                 double tau_scale,
                                                 double alpha,
                                                 double *out_score);

/**
 * Pairwise margin rank loss over scores listed best first. When `out_grad`
 * is not null it receives `len` partial derivatives.
 *
 * # Safety
 * `scores` must point to `len` values; `out_grad`, if given, to `len` writable slots.
 */
enum CalsetStatus calset_margin_rank_loss(const double *scores,
                                          size_t len,
                                          double lambda_margin,
                                          double *out_loss,
                                          double *out_grad);

/**
 * Latent-alignment contrastive loss. Vectors are row-major, `dim` values each.
 *
 * # Safety
 * `positives` must hold `n_pos * dim` values and `negatives` `n_neg * dim`.
 */
enum CalsetStatus calset_contrastive_loss(const double *positives,
                                          size_t n_pos,
                                          const double *negatives,
                                          size_t n_neg,
                                          size_t dim,
                                          double temperature,
                                          double *out_loss);

/**
 * ConSeq loss over sequence log-likelihoods of positives and negatives.
 *
 * # Safety
 * Inputs must point to `n_pos` and `n_neg` values; `out_loss` must be writable.
 */
enum CalsetStatus calset_conseq_loss(const double *positive_ll,
                                     size_t n_pos,
                                     const double *negative_ll,
                                     size_t n_neg,
                                     double *out_loss);

/**
 * Opens a run in `workdir`. `config_path` may be null for built-in defaults.
 *
 * # Safety
 * Strings must be nul-terminated; `out_run` must be writable.
 */
enum CalsetStatus calset_run_open(const char *workdir,
                                  const char *config_path,
                                  bool offline,
                                  struct CalsetRun **out_run);

/**
 * Releases a run handle. Null is ignored.
 *
 * # Safety
 * `run` must come from [`calset_run_open`] and must not be freed twice.
 */
void calset_run_free(struct CalsetRun *run);

/**
 * Hex SHA-256 of the run's config, as recorded in the manifest.
 *
 * # Safety
 * `run` must be a live handle; release the string with [`calset_string_free`].
 */
enum CalsetStatus calset_run_config_hash(const struct CalsetRun *run, char **out_hash);

/**
 * Runs every stage from entity indexing to the reports.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum CalsetStatus calset_run_all(const struct CalsetRun *run);

/**
 * Selects sets for one strategy over an already normalized pool and writes
 * the number of sets to `out_sets`.
 *
 * # Safety
 * `run` must be a live handle; strings must be nul-terminated.
 */
enum CalsetStatus calset_run_select(const struct CalsetRun *run,
                                    const char *kind,
                                    const char *strategy,
                                    size_t *out_sets);

/**
 * Renders the statistics and correlation report for a pool kind.
 *
 * # Safety
 * `run` must be a live handle; release the string with [`calset_string_free`].
 */
enum CalsetStatus calset_run_report(const struct CalsetRun *run,
                                    const char *kind,
                                    char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CALSET_H */
