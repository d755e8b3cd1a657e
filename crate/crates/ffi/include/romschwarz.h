#ifndef ROMSCHWARZ_H
#define ROMSCHWARZ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsStatus {
  RS_STATUS_OK = 0,
  RS_STATUS_NULL_POINTER = 1,
  RS_STATUS_INVALID_ARGUMENT = 2,
  RS_STATUS_IO = 3,
  RS_STATUS_PARSE = 4,
  RS_STATUS_INCOMPATIBLE = 5,
  RS_STATUS_NUMERICAL = 6,
  RS_STATUS_PANIC = 7,
} RsStatus;

// Online solver: an artifact plus the problem it was checked against.
typedef struct RsOnline RsOnline;

// Trained reduced trace map.
typedef struct RsRom RsRom;

typedef struct RsOnlineResult {
  size_t sweeps;
  double relerr_omega1;
  double relerr_omega3;
  bool converged;
  bool extrapolated;
  // Middle-subdomain linear solves performed; zero by construction.
  size_t omega2_solves;
} RsOnlineResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *romschwarz_last_error(void);

// Library version as a static NUL-terminated string.
const char *romschwarz_version(void);

// Loads an artifact written by `romschwarz offline`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum RsStatus romschwarz_rom_load(const char *path, struct RsRom **out);

// # Safety
// `rom` must come from [`romschwarz_rom_load`] and not be freed twice.
void romschwarz_rom_free(struct RsRom *rom);

// Number of retained modes on 2in, 2out, 1out, 3in.
//
// # Safety
// `rom` must be a live handle and `ranks` must point to 4 writable values.
enum RsStatus romschwarz_rom_ranks(const struct RsRom *rom, size_t *ranks);

// Nodes per interface trace.
//
// # Safety
// `rom` must be a live handle and `len` writable.
enum RsStatus romschwarz_rom_trace_len(const struct RsRom *rom, size_t *len);

// Reduced trace map: traces on 2in and 2out to traces on 1out and 3in.
// All four buffers hold `len` values, which must equal the trace length.
//
// # Safety
// Buffers must be valid for `len` reads or writes; `extrapolated` may be null.
enum RsStatus romschwarz_rom_evaluate(const struct RsRom *rom,
                                      const double *in2,
                                      const double *out2,
                                      size_t len,
                                      double parameter,
                                      double *out1,
                                      double *in3,
                                      bool *extrapolated);

// Online solver for the configuration at `config_path` (the bundled
// default when null). Fails with `INCOMPATIBLE` when the artifact was
// trained on a different geometry or physics.
//
// # Safety
// `rom` must be a live handle, `config_path` null or NUL-terminated, `out` valid.
enum RsStatus romschwarz_online_new(const struct RsRom *rom,
                                    const char *config_path,
                                    struct RsOnline **out);

// # Safety
// `online` must come from [`romschwarz_online_new`] and not be freed twice.
void romschwarz_online_free(struct RsOnline *online);

// Runs the reduced iteration at `parameter`.
//
// # Safety
// `online` must be a live handle and `result` writable.
enum RsStatus romschwarz_online_run(const struct RsOnline *online,
                                    double parameter,
                                    struct RsOnlineResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROMSCHWARZ_H */
