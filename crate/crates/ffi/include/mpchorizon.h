#ifndef MPCHORIZON_H
#define MPCHORIZON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MpchStatus {
  MPCH_STATUS_OK = 0,
  MPCH_STATUS_NULL_POINTER = 1,
  MPCH_STATUS_INVALID_INPUT = 2,
  MPCH_STATUS_DIMENSION_MISMATCH = 3,
  MPCH_STATUS_DEGENERATE = 4,
  MPCH_STATUS_OUT_OF_RANGE = 5,
  MPCH_STATUS_NUMERICAL = 6,
  MPCH_STATUS_SERIALIZATION = 7,
  MPCH_STATUS_BUFFER_TOO_SMALL = 8,
  MPCH_STATUS_PANIC = 9,
} MpchStatus;

typedef enum MpchMemoryMode {
  MPCH_MEMORY_MODE_EAGER = 0,
  MPCH_MEMORY_MODE_STATIC = 1,
} MpchMemoryMode;

typedef enum MpchObjectiveKind {
  // Cheapest horizon whose estimated rate reaches `1 - parameter`.
  MPCH_OBJECTIVE_KIND_ACCURACY_CONSTRAINT = 0,
  // Minimizes `-rate + parameter * cost`.
  MPCH_OBJECTIVE_KIND_WEIGHTED = 1,
} MpchObjectiveKind;

typedef enum MpchCostKind {
  MPCH_COST_KIND_LINEAR = 0,
  MPCH_COST_KIND_LADDER = 1,
} MpchCostKind;

// Opaque network handle.
typedef struct MpchNetwork MpchNetwork;

typedef struct MpchSelection {
  // Chosen horizon, 0 when no horizon is feasible.
  size_t horizon;
  bool feasible;
  // NaN when infeasible.
  double objective_value;
} MpchSelection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *mpch_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mpch_version(void);

// Builds a residual MLP (dense input block, mlp-residual blocks, dense head).
// A non-positive `weight_std` selects the default scale `1/width`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MpchStatus mpch_network_res_mlp(size_t input_dim,
                                     size_t width,
                                     size_t output_dim,
                                     size_t depth,
                                     double weight_std,
                                     uint64_t seed,
                                     struct MpchNetwork **out);

// Parses a network document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum MpchStatus mpch_network_from_json(const char *json, struct MpchNetwork **out);

// Serializes a network. Release the string with [`mpch_string_free`].
//
// # Safety
// `net` must be a live handle and `out` writable.
enum MpchStatus mpch_network_to_json(const struct MpchNetwork *net, char **out);

// # Safety
// `net` must be NULL or a handle from this library that has not been freed.
void mpch_network_free(struct MpchNetwork *net);

// # Safety
// `s` must be NULL or a string returned by this library that has not been freed.
void mpch_string_free(char *s);

// Number of blocks, or 0 for a NULL handle.
//
// # Safety
// `net` must be NULL or a live handle.
size_t mpch_network_depth(const struct MpchNetwork *net);

// Total parameter count, or 0 for a NULL handle.
//
// # Safety
// `net` must be NULL or a live handle.
size_t mpch_network_param_count(const struct MpchNetwork *net);

// Horizon-`h` gradient of every block, concatenated in block order into `out`.
// `x` is `rows x input_cols` and `y` is `rows x label_cols`, both row-major.
// `out_len` must be at least the parameter count.
//
// # Safety
// Pointers must reference buffers of the stated sizes; `net` must be live.
enum MpchStatus mpch_horizon_gradient(const struct MpchNetwork *net,
                                      const double *x,
                                      size_t rows,
                                      size_t input_cols,
                                      const double *y,
                                      size_t label_cols,
                                      size_t h,
                                      double *out,
                                      size_t out_len);

// Cosine between the horizon-`h` gradient and the full back-propagation gradient.
//
// # Safety
// Same requirements as [`mpch_horizon_gradient`]; `cos_out` must be writable.
enum MpchStatus mpch_gradient_cosine(const struct MpchNetwork *net,
                                     const double *x,
                                     size_t rows,
                                     size_t input_cols,
                                     const double *y,
                                     size_t label_cols,
                                     size_t h,
                                     double *cos_out);

// Activation memory for horizon `h` given per-block activation units.
//
// # Safety
// `units` must point to `depth` values and `out` must be writable.
enum MpchStatus mpch_memory_estimate(enum MpchMemoryMode mode,
                                     const double *units,
                                     size_t depth,
                                     double fixed_overhead,
                                     size_t h,
                                     double *out);

// Fits a profile to `count` measured `(horizon, cosine, memory)` triples and
// picks the best horizon in `1..=depth`.
//
// # Safety
// `horizons`, `cosines` and `memory` must each point to `count` values;
// `out` must be writable.
enum MpchStatus mpch_select_horizon(size_t depth,
                                    const size_t *horizons,
                                    const double *cosines,
                                    const double *memory,
                                    size_t count,
                                    enum MpchObjectiveKind objective,
                                    double objective_param,
                                    enum MpchCostKind cost,
                                    double unit_cost,
                                    double node_memory,
                                    struct MpchSelection *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPCHORIZON_H */
