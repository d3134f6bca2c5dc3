#ifndef CVTQT_H
#define CVTQT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvtqtStatus {
  CVTQT_STATUS_OK = 0,
  CVTQT_STATUS_NULL_POINTER = 1,
  CVTQT_STATUS_INVALID_ARGUMENT = 2,
  CVTQT_STATUS_INVALID_GRAPH = 3,
  CVTQT_STATUS_PROTOCOL_FAILED = 4,
  CVTQT_STATUS_BUFFER_TOO_SMALL = 5,
  CVTQT_STATUS_PANIC = 6,
} CvtqtStatus;

/**
 * Weighted cluster graph.
 */
typedef struct CvtqtGraph CvtqtGraph;

/**
 * Result of a symbolic protocol run.
 */
typedef struct CvtqtReport CvtqtReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *cvtqt_last_error(void);

/**
 * Canonical twelve-node graph.
 */
enum CvtqtStatus cvtqt_graph_twelve(struct CvtqtGraph **out);

/**
 * Two-node graph with unit weight.
 */
enum CvtqtStatus cvtqt_graph_two(struct CvtqtGraph **out);

/**
 * Weighted three-node graph.
 */
enum CvtqtStatus cvtqt_graph_three(double g12, double g13, double g23, struct CvtqtGraph **out);

/**
 * Graph from a row-major `n × n` weight matrix.
 *
 * # Safety
 * `weights` must point to `n * n` readable doubles.
 */
enum CvtqtStatus cvtqt_graph_from_weights(const double *weights, size_t n, struct CvtqtGraph **out);

/**
 * # Safety
 * `graph` must be null or a live handle.
 */
enum CvtqtStatus cvtqt_graph_node_count(const struct CvtqtGraph *graph, size_t *out);

/**
 * # Safety
 * `graph` must be null or a handle not yet freed.
 */
void cvtqt_graph_free(struct CvtqtGraph *graph);

/**
 * Runs a scenario (`bca`, `cab`, `pairwise:ab`, `merge`, `single-hop:a2`,
 * `single-hop:a3`, `one-directional`) with its standard schedule.
 *
 * # Safety
 * `graph` must be a live handle and `scenario` a NUL-terminated string.
 */
enum CvtqtStatus cvtqt_run_protocol(const struct CvtqtGraph *graph,
                                    const char *scenario,
                                    struct CvtqtReport **out);

/**
 * Number of output quadratures (X rows, then Y rows).
 *
 * # Safety
 * `report` must be a live handle.
 */
enum CvtqtStatus cvtqt_report_len(const struct CvtqtReport *report, size_t *out);

/**
 * Copies the variance coefficients into `buf`, which must hold at least
 * `cvtqt_report_len` values.
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum CvtqtStatus cvtqt_report_variances(const struct CvtqtReport *report, double *buf, size_t len);

/**
 * Report as a JSON document. Release with [`cvtqt_string_free`].
 *
 * # Safety
 * `report` must be a live handle.
 */
enum CvtqtStatus cvtqt_report_json(const struct CvtqtReport *report, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void cvtqt_string_free(char *s);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void cvtqt_report_free(struct CvtqtReport *report);

/**
 * Failure probability for `pairs` error pairs `(x[k], y[k])` at `s_db`.
 *
 * # Safety
 * `x` and `y` must each hold `pairs` readable doubles.
 */
enum CvtqtStatus cvtqt_error_probability(const double *x,
                                         const double *y,
                                         size_t pairs,
                                         double s_db,
                                         double *out);

/**
 * Optimal three-node weight and its failure probability at `s_db`.
 *
 * # Safety
 * `g` and `probability` must be writable.
 */
enum CvtqtStatus cvtqt_optimize_weight(double s_db, double *g, double *probability);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVTQT_H */
