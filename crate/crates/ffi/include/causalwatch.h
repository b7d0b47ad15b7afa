#ifndef CAUSALWATCH_H
#define CAUSALWATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_NULL_POINTER = 1,
  CW_STATUS_INVALID_INPUT = 2,
  CW_STATUS_IO = 3,
  CW_STATUS_PARSE = 4,
  CW_STATUS_SHAPE = 5,
  CW_STATUS_TRAINING = 6,
  CW_STATUS_PANIC = 7,
} CwStatus;

/**
 * Weighted temporal causal graph.
 */
typedef struct CwGraph CwGraph;

/**
 * Trained graph classifier.
 */
typedef struct CwModel CwModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cw_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *cw_last_error_message(void);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cw_string_free(char *s);

/**
 * Fit a causal graph to a row-major `rows x cols` window. Nodes are named
 * `x0, x1, ...`.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles; `out` must be writable.
 */
enum CwStatus cw_graph_fit(const double *data,
                           size_t rows,
                           size_t cols,
                           size_t max_lag,
                           double lambda,
                           double edge_threshold,
                           struct CwGraph **out);

/**
 * Parse a graph from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CwStatus cw_graph_from_json(const char *json, struct CwGraph **out);

/**
 * Serialize a graph to JSON. Free the result with `cw_string_free`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CwStatus cw_graph_to_json(const struct CwGraph *graph, char **out);

/**
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CwStatus cw_graph_node_count(const struct CwGraph *graph, size_t *out);

/**
 * Number of nonzero entries across the intra and lag blocks.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CwStatus cw_graph_edge_count(const struct CwGraph *graph, size_t *out);

/**
 * Acyclicity surrogate `tr(exp(W∘W)) - M` of the intra block; 0 for a DAG.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CwStatus cw_graph_acyclicity(const struct CwGraph *graph, double *out);

/**
 * Release a graph. NULL is ignored.
 *
 * # Safety
 * `graph` must come from this library and not have been freed.
 */
void cw_graph_free(struct CwGraph *graph);

/**
 * `1 - JS` between the edge-weight histograms of two graphs (`bins` bins over
 * `[0, weight_max]`).
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum CwStatus cw_graph_similarity(const struct CwGraph *a,
                                  const struct CwGraph *b,
                                  size_t bins,
                                  double weight_max,
                                  double *out);

/**
 * Load a model dump.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CwStatus cw_model_from_json(const char *json, struct CwModel **out);

/**
 * Attack probability of `graph`, with attack/impact nodes given as prior
 * knowledge JSON (`{"attack_nodes": [...], "impact_nodes": [...]}`).
 *
 * # Safety
 * Handles must be live; `prior_json` must be a NUL-terminated string; `out` must be writable.
 */
enum CwStatus cw_model_predict(const struct CwModel *model,
                               const struct CwGraph *graph,
                               const char *prior_json,
                               double *out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void cw_model_free(struct CwModel *model);

/**
 * Run the full pipeline on a labeled CSV file. `config_toml` and `out_dir`
 * may be NULL (defaults, no artifacts). The report JSON is returned through
 * `report_json`; free it with `cw_string_free`.
 *
 * # Safety
 * String arguments must be NUL-terminated or NULL where allowed; `report_json` must be writable.
 */
enum CwStatus cw_run_pipeline(const char *config_toml,
                              const char *data_csv_path,
                              const char *prior_json,
                              const char *out_dir,
                              char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAUSALWATCH_H */
