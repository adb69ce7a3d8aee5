/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PDG_H
#define PDG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdgStatus {
  PDG_STATUS_OK = 0,
  PDG_STATUS_NULL_ARGUMENT = 1,
  PDG_STATUS_INVALID_INPUT = 2,
  PDG_STATUS_NOT_CONVERGED = 3,
  PDG_STATUS_IO = 4,
  PDG_STATUS_PANIC = 5,
} PdgStatus;

// Run configuration.
typedef struct PdgConfig PdgConfig;

// Trained steering network.
typedef struct PdgModel PdgModel;

// Converged nominal solution.
typedef struct PdgNominal PdgNominal;

typedef struct PdgNominalInfo {
  double tf_delta0_s;
  double tf_final_s;
  double extra_fuel_kg;
  double final_delta;
  double final_beta_deg;
  // Nondimensional final time.
  double final_tf;
  double p0[4];
  double touchdown_triple[3];
  size_t stages;
} PdgNominalInfo;

// Lander state in SI units.
typedef struct PdgState {
  double r_m;
  double u_ms;
  double v_ms;
  double m_kg;
} PdgState;

// State when the flight crossed the touchdown gate.
typedef struct PdgTerminal {
  double flight_time_s;
  double altitude_m;
  double u_ms;
  double v_ms;
  double mass_kg;
  double fuel_kg;
  double beta_deg;
} PdgTerminal;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next `pdg_*` call on the same thread.
const char *pdg_last_error(void);

// Library version, static storage.
const char *pdg_version(void);

// Built-in default configuration.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum PdgStatus pdg_config_default(struct PdgConfig **out);

// Parses a JSON run configuration (same format as the CLI's `--config`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
enum PdgStatus pdg_config_from_json(const char *json, struct PdgConfig **out);

// # Safety
// `cfg` must be null or a handle from this library not yet freed.
void pdg_config_free(struct PdgConfig *cfg);

// Solves the nominal landing with weight continuation.
//
// # Safety
// `cfg` must be a live config handle; `out` as in [`pdg_config_default`].
enum PdgStatus pdg_nominal_solve(const struct PdgConfig *cfg, struct PdgNominal **out);

// # Safety
// `nominal` must be a live handle; `info` must point to writable storage.
enum PdgStatus pdg_nominal_info(const struct PdgNominal *nominal, struct PdgNominalInfo *info);

// # Safety
// `nominal` must be null or a handle from this library not yet freed.
void pdg_nominal_free(struct PdgNominal *nominal);

// Loads a model file written by `pdg train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
enum PdgStatus pdg_model_load(const char *path, struct PdgModel **out);

// Parses a model from its JSON text.
//
// # Safety
// `json` must be a NUL-terminated string; `out` as in [`pdg_config_default`].
enum PdgStatus pdg_model_from_json(const char *json, struct PdgModel **out);

// # Safety
// `model` must be null or a handle from this library not yet freed.
void pdg_model_free(struct PdgModel *model);

// Network steering command, radians, for a state in SI units.
//
// # Safety
// Handles must be live; `state` and `beta_rad` must be valid pointers.
enum PdgStatus pdg_model_command(const struct PdgModel *model,
                                 const struct PdgConfig *cfg,
                                 const struct PdgState *state,
                                 double *beta_rad);

// Hamiltonian-minimizing steering angle for nondimensional state
// `(r, u, v, m)` and costate `(p_r, p_u, p_v, p_m)` at weight `delta`.
//
// # Safety
// `cfg` must be live; `state` and `costate` must point to four doubles each.
enum PdgStatus pdg_optimal_steering(const struct PdgConfig *cfg,
                                    double delta,
                                    const double *state,
                                    const double *costate,
                                    double *beta_rad);

// Flies the network from `x0` (SI units) to the touchdown gate.
// `nominal` supplies the flight-time scale for the timeout.
//
// # Safety
// Handles must be live; `x0` and `out` must be valid pointers.
enum PdgStatus pdg_simulate(const struct PdgModel *model,
                            const struct PdgConfig *cfg,
                            const struct PdgNominal *nominal,
                            const struct PdgState *x0,
                            struct PdgTerminal *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDG_H */
