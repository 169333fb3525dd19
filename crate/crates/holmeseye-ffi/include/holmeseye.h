/* C interface to the holmeseye attribute-inference engine. */

#ifndef HOLMESEYE_H
#define HOLMESEYE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible FFI call.
 */
typedef enum HeStatus {
  HE_STATUS_OK = 0,
  HE_STATUS_NULL_ARGUMENT = 1,
  HE_STATUS_INVALID_ARGUMENT = 2,
  HE_STATUS_INVALID_UTF8 = 3,
  HE_STATUS_BAD_LAYOUT = 4,
  HE_STATUS_SERIES_MISMATCH = 5,
} HeStatus;

/**
 * Opaque accumulator of named per-attribute score rows for table rendering.
 */
typedef struct HeTableBuilder HeTableBuilder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Release a string previously returned through an out-parameter.
 *
 * # Safety
 * `s` must be a pointer obtained from this library, or NULL.
 */
void he_string_free(char *s);

/**
 * The built-in twelve-attribute taxonomy as a JSON document.
 *
 * # Safety
 * `out_json` must be a valid pointer to writable memory.
 */
enum HeStatus he_taxonomy_json(char **out_json);

/**
 * Number of contiguous groups formed from `n` images at group size `g`
 * (the ceiling of n/g), or 0 for invalid arguments.
 */
uint64_t he_group_count(uint64_t n, uint64_t g);

/**
 * The contiguous grouping of 1-based image indices as a JSON array of
 * arrays.
 *
 * # Safety
 * `out_json` must be a valid pointer to writable memory.
 */
enum HeStatus he_groups_json(uint64_t n, uint64_t g, char **out_json);

/**
 * Exact-match score for a qualitative attribute: 100.0 on (normalized)
 * label equality, else 0.0.
 *
 * # Safety
 * `prediction` and `truth` must be NUL-terminated strings; `out_score` must
 * be a valid pointer.
 */
enum HeStatus he_score_qualitative(const char *prediction, const char *truth, double *out_score);

/**
 * Relative-error score for a quantitative attribute on the given scale,
 * normalized by the scale width and clamped to [0, 100].
 *
 * # Safety
 * `out_score` must be a valid pointer.
 */
enum HeStatus he_score_quantitative(int64_t prediction,
                                    int64_t truth,
                                    int64_t scale_min,
                                    int64_t scale_max,
                                    double *out_score);

/**
 * Create an empty table builder. Release with `he_table_free`.
 */
struct HeTableBuilder *he_table_new(void);

/**
 * Release a table builder.
 *
 * # Safety
 * `table` must come from `he_table_new`, or be NULL.
 */
void he_table_free(struct HeTableBuilder *table);

/**
 * Append one named row of 12 per-attribute scores (category-major attribute
 * order); category and overall means are derived.
 *
 * # Safety
 * `table` must come from `he_table_new`; `name` must be a NUL-terminated
 * string; `values` must point to 12 doubles.
 */
enum HeStatus he_table_add_series(struct HeTableBuilder *table,
                                  const char *name,
                                  const double *values);

/**
 * Render the accumulated series as a table in the named layout ("main",
 * "ablation", "image_sweep", or "human"), returned as JSON.
 *
 * # Safety
 * `table` must come from `he_table_new`; `layout` must be a NUL-terminated
 * string; `out_json` must be a valid pointer.
 */
enum HeStatus he_table_render_json(const struct HeTableBuilder *table,
                                   const char *layout,
                                   char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLMESEYE_H */
