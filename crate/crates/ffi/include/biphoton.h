#ifndef BIPHOTON_H
#define BIPHOTON_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum BpStatus {
  BP_STATUS_OK = 0,
  BP_STATUS_INVALID_ARGUMENT = 1,
  BP_STATUS_CONFIG = 2,
  BP_STATUS_NUMERICAL = 3,
  BP_STATUS_IO = 4,
  BP_STATUS_NULL_POINTER = 5,
  BP_STATUS_BUFFER_TOO_SMALL = 6,
  BP_STATUS_PANIC = 7,
} BpStatus;

/**
 * Parsed and resolved run configuration.
 */
typedef struct BpConfig BpConfig;

/**
 * Time-sorted event stream.
 */
typedef struct BpEventStream BpEventStream;

/**
 * Result of one pipeline run.
 */
typedef struct BpSimulation BpSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes, including the terminating NUL, of the last error message
 * on this thread (0 when there is none).
 */
size_t bp_last_error_length(void);

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `len`). Returns the number of bytes written including the NUL.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t bp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bp_version(void);

/**
 * Configuration with every default applied.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum BpStatus bp_config_default(struct BpConfig **out);

/**
 * Parse a TOML configuration document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum BpStatus bp_config_from_toml(const char *toml, struct BpConfig **out);

/**
 * Override the base seed.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum BpStatus bp_config_set_seed(struct BpConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be null or a handle from this library, not yet freed.
 */
void bp_config_free(struct BpConfig *config);

/**
 * Run the configured pipeline.
 *
 * # Safety
 * `config` must be a live handle; `out` a valid handle slot.
 */
enum BpStatus bp_simulate(const struct BpConfig *config, struct BpSimulation **out);

/**
 * Grid size `M` of a simulation.
 *
 * # Safety
 * `sim` must be a live handle or null (returns 0).
 */
size_t bp_simulation_size(const struct BpSimulation *sim);

/**
 * Number of profiles: ground truth, singles, marginal, then one per window.
 *
 * # Safety
 * `sim` must be a live handle or null (returns 0).
 */
size_t bp_simulation_profile_count(const struct BpSimulation *sim);

/**
 * Copy the `M x M` coincidence matrix (row = idler) into `out`.
 *
 * # Safety
 * `sim` must be a live handle; `out` valid for `len` doubles.
 */
enum BpStatus bp_simulation_gamma(const struct BpSimulation *sim, double *out, size_t len);

/**
 * Copy profile `index` (see [`bp_simulation_profile_count`]) into `out`.
 *
 * # Safety
 * `sim` must be a live handle; `out` valid for `len` doubles.
 */
enum BpStatus bp_simulation_profile(const struct BpSimulation *sim,
                                    size_t index,
                                    double *out,
                                    size_t len);

/**
 * MTF of profile `index` (NaN when the object has no periodic component).
 *
 * # Safety
 * `sim` must be a live handle; `out` a valid pointer.
 */
enum BpStatus bp_simulation_mtf(const struct BpSimulation *sim, size_t index, double *out);

/**
 * # Safety
 * `sim` must be null or a handle from this library, not yet freed.
 */
void bp_simulation_free(struct BpSimulation *sim);

/**
 * MTF of `image` relative to the dominant frequency of `ground_truth`.
 *
 * # Safety
 * Both arrays must hold `n` doubles; `out` must be valid.
 */
enum BpStatus bp_mtf(const double *image, const double *ground_truth, size_t n, double *out);

/**
 * Read a text or binary event file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum BpStatus bp_events_read(const char *path, struct BpEventStream **out);

/**
 * Number of records in a stream.
 *
 * # Safety
 * `stream` must be a live handle or null (returns 0).
 */
size_t bp_events_len(const struct BpEventStream *stream);

/**
 * Count coincidences within `window` nanoseconds.
 *
 * # Safety
 * `stream` must be a live handle; `out` a valid pointer.
 */
enum BpStatus bp_events_pair_count(const struct BpEventStream *stream,
                                   uint64_t window,
                                   size_t *out);

/**
 * # Safety
 * `stream` must be null or a handle from this library, not yet freed.
 */
void bp_events_free(struct BpEventStream *stream);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIPHOTON_H */
