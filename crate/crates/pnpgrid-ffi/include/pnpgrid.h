#ifndef PNPGRID_H
#define PNPGRID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call. The numeric values match the command-line exit codes.
typedef enum PnpgridStatus {
  PNPGRID_STATUS_OK = 0,
  // A certificate does not hold, a request is denied or a synthesis is infeasible.
  PNPGRID_STATUS_DENIED = 2,
  PNPGRID_STATUS_INVALID_INPUT = 3,
  PNPGRID_STATUS_NUMERICAL = 4,
  PNPGRID_STATUS_NULL_POINTER = 5,
  PNPGRID_STATUS_INVALID_UTF8 = 6,
  PNPGRID_STATUS_PANIC = 7,
} PnpgridStatus;

// Stored controllers keyed by DGU.
typedef struct PnpgridGains PnpgridGains;

// Microgrid topology and parameters.
typedef struct PnpgridGrid PnpgridGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next call into the library on the same thread.
const char *pnpgrid_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void pnpgrid_string_free(char *s);

// Parses a grid description in TOML.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum PnpgridStatus pnpgrid_grid_parse(const char *toml, struct PnpgridGrid **out);

// Number of DGUs of a grid, 0 for null.
//
// # Safety
// `grid` must be null or a live handle.
uintptr_t pnpgrid_grid_dgu_count(const struct PnpgridGrid *grid);

// Releases a grid. Null is ignored.
//
// # Safety
// `grid` must be null or a handle not yet freed.
void pnpgrid_grid_free(struct PnpgridGrid *grid);

// Parses a gains file.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum PnpgridStatus pnpgrid_gains_parse(const char *toml, struct PnpgridGains **out);

// Serializes a gain set; `timestamp` adds the generation time to the metadata.
//
// # Safety
// `gains` must be a live handle and `out` a writable pointer.
enum PnpgridStatus pnpgrid_gains_to_toml(const struct PnpgridGains *gains,
                                         bool timestamp,
                                         char **out);

// Number of DGUs with stored gains, 0 for null.
//
// # Safety
// `gains` must be null or a live handle.
uintptr_t pnpgrid_gains_count(const struct PnpgridGains *gains);

// Releases a gain set. Null is ignored.
//
// # Safety
// `gains` must be null or a handle not yet freed.
void pnpgrid_gains_free(struct PnpgridGains *gains);

// Synthesizes controllers for every DGU of `grid`.
//
// `eta` fixes `P(1,1)` when positive and selects the default otherwise.
// `prefilter_hz` adds a reference prefilter when positive.
//
// # Safety
// `grid` must be a live handle and `out` a writable pointer.
enum PnpgridStatus pnpgrid_synthesize(const struct PnpgridGrid *grid,
                                      double eta,
                                      double prefilter_hz,
                                      bool compensator,
                                      struct PnpgridGains **out);

// Checks the per-DGU and global certificates of `gains` on `grid`.
//
// Returns [`PnpgridStatus::Denied`] when a certificate does not hold. The
// report is written to `report` unless it is null.
//
// # Safety
// `grid` and `gains` must be live handles; `report` must be null or writable.
enum PnpgridStatus pnpgrid_certify(const struct PnpgridGrid *grid,
                                   const struct PnpgridGains *gains,
                                   char **report);

// Decides whether DGU `id` of `grid` may join the others.
//
// `gains` covers every DGU except `id`. `retune` resynthesizes the
// neighbors instead of keeping gains that remain valid. The decision is
// written to `decision` and, when allowed, the updated gains to `out`;
// either may be null.
//
// # Safety
// `grid` and `gains` must be live handles; out-pointers must be null or writable.
enum PnpgridStatus pnpgrid_plug_in(const struct PnpgridGrid *grid,
                                   const struct PnpgridGains *gains,
                                   uint32_t id,
                                   bool retune,
                                   char **decision,
                                   struct PnpgridGains **out);

// Decides whether DGU `id` may leave `grid`. Arguments as in [`pnpgrid_plug_in`].
//
// # Safety
// `grid` and `gains` must be live handles; out-pointers must be null or writable.
enum PnpgridStatus pnpgrid_unplug(const struct PnpgridGrid *grid,
                                  const struct PnpgridGains *gains,
                                  uint32_t id,
                                  bool retune,
                                  char **decision,
                                  struct PnpgridGains **out);

// Simulates a scenario given as TOML text.
//
// `gains` backs the controller sets sourced from a gains file and may be
// null when none is. The trace CSV and the metrics TOML are written to
// `trace` and `metrics` unless null. An aborted run returns
// [`PnpgridStatus::Numerical`] together with the partial trace.
//
// # Safety
// `grid` must be a live handle, `scenario` a NUL-terminated string,
// `gains` null or live and the out-pointers null or writable.
enum PnpgridStatus pnpgrid_simulate(const struct PnpgridGrid *grid,
                                    const char *scenario,
                                    const struct PnpgridGains *gains,
                                    char **trace,
                                    char **metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PNPGRID_H */
