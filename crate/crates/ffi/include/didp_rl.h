#ifndef DIDP_RL_H
#define DIDP_RL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every call.
 */
typedef enum DidpStatus {
  DIDP_STATUS_OK = 0,
  DIDP_STATUS_NULL_POINTER = 1,
  DIDP_STATUS_INVALID_ARGUMENT = 2,
  DIDP_STATUS_INSTANCE_ERROR = 3,
  DIDP_STATUS_SEARCH_ERROR = 4,
  DIDP_STATUS_TRAIN_ERROR = 5,
  DIDP_STATUS_IO_ERROR = 6,
  DIDP_STATUS_PANIC = 7,
} DidpStatus;

/*
 A problem instance together with its compiled model.
 */
typedef struct DidpInstance DidpInstance;

/*
 Outcome of a search.
 */
typedef struct DidpResult DidpResult;

/*
 Message of the last failed call on this thread, or null. Owned by the
 library; valid until the next call on the same thread.
 */
const char *didp_last_error(void);

/*
 Generates a random instance of `domain` ("tsp", "tsptw", "knapsack" or
 "portfolio").

 # Safety
 `domain` must be a valid C string and `out` a valid pointer.
 */
enum DidpStatus didp_instance_generate(const char *domain,
                                       size_t n,
                                       uint64_t seed,
                                       struct DidpInstance **out);

/*
 Loads a named fixture ("fix-tsp3", ...) or an instance file.

 # Safety
 `spec` must be a valid C string and `out` a valid pointer.
 */
enum DidpStatus didp_instance_load(const char *spec, struct DidpInstance **out);

/*
 Parses an instance from its JSON text.

 # Safety
 `json` must be a valid C string and `out` a valid pointer.
 */
enum DidpStatus didp_instance_from_json(const char *json, struct DidpInstance **out);

/*
 Number of customers (including the depot) or items.

 # Safety
 `instance` must be null or a handle from this library.
 */
enum DidpStatus didp_instance_size(const struct DidpInstance *instance, size_t *out);

/*
 # Safety
 `instance` must be null or a handle from this library, not yet freed.
 */
void didp_instance_free(struct DidpInstance *instance);

/*
 Runs `algorithm` ("cabs", "acps", "apps") with `guidance` ("dual",
 "zero", "greedy", "dqn", "ppo"). `weights` is required for learned
 guidance and ignored otherwise. `max_expansions` of 0 and a
 non-positive `time_limit_secs` mean unlimited.

 # Safety
 String arguments must be valid C strings (`weights` may be null),
 `instance` a live handle and `out` a valid pointer.
 */
enum DidpStatus didp_solve(const struct DidpInstance *instance,
                           const char *algorithm,
                           const char *guidance,
                           const char *weights,
                           uint64_t max_expansions,
                           double time_limit_secs,
                           struct DidpResult **out);

/*
 Cost of the best solution. `has_solution` is set to 0 (and `cost` left
 untouched) when none was found.

 # Safety
 `result` must be a live handle; output pointers must be valid.
 */
enum DidpStatus didp_result_cost(const struct DidpResult *result,
                                 int32_t *has_solution,
                                 double *cost);

/*
 Search statistics. Any output pointer may be null.

 # Safety
 `result` must be a live handle; non-null output pointers must be valid.
 */
enum DidpStatus didp_result_stats(const struct DidpResult *result,
                                  int32_t *proved_optimal,
                                  uint64_t *expansions,
                                  uint64_t *generated);

/*
 Number of transitions in the best solution (0 if none).

 # Safety
 `result` must be a live handle and `len` a valid pointer.
 */
enum DidpStatus didp_result_solution_len(const struct DidpResult *result, size_t *len);

/*
 Label of the `index`-th transition, e.g. "visit 2". The string is owned by
 the result handle.

 # Safety
 `result` must be a live handle and `label` a valid pointer.
 */
enum DidpStatus didp_result_solution_label(const struct DidpResult *result,
                                           size_t index,
                                           const char **label);

/*
 Number of points in the anytime trace.

 # Safety
 `result` must be a live handle and `len` a valid pointer.
 */
enum DidpStatus didp_result_trace_len(const struct DidpResult *result, size_t *len);

/*
 The `index`-th improvement: expansions so far and the new cost.

 # Safety
 `result` must be a live handle; output pointers must be valid.
 */
enum DidpStatus didp_result_trace_point(const struct DidpResult *result,
                                        size_t index,
                                        uint64_t *expansions,
                                        double *cost);

/*
 # Safety
 `result` must be null or a handle from this library, not yet freed.
 */
void didp_result_free(struct DidpResult *result);

/*
 Trains a network ("dqn" or "ppo") on random instances of `domain` with
 the default settings for size `n`, or on `instance` when non-null, and
 writes the weights to `out_path`. PPO also writes the critic to
 `<out_path>.critic`. `episodes` of 0 keeps the default.

 # Safety
 String arguments must be valid C strings; `instance` may be null.
 */
enum DidpStatus didp_train(const char *domain,
                           size_t n,
                           const struct DidpInstance *instance,
                           const char *algorithm,
                           size_t episodes,
                           uint64_t seed,
                           const char *out_path);

/*
 Percentage gap of `cost` to `best`; pass `has_cost = 0` for a missing
 solution (gap 100).

 # Safety
 `gap` must be a valid pointer.
 */
enum DidpStatus didp_compute_gap(int32_t has_cost, double cost, double best, double *gap);

#endif  /* DIDP_RL_H */
