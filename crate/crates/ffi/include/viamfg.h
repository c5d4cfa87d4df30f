#ifndef VIAMFG_H
#define VIAMFG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ViamfgStatus {
  VIAMFG_STATUS_OK = 0,
  VIAMFG_STATUS_NULL_POINTER = 1,
  VIAMFG_STATUS_INVALID_ARGUMENT = 2,
  VIAMFG_STATUS_CONVERGENCE = 3,
  VIAMFG_STATUS_IO = 4,
  VIAMFG_STATUS_NUMERICAL = 5,
  VIAMFG_STATUS_PANIC = 6,
} ViamfgStatus;

typedef struct ViamfgGrid ViamfgGrid;

typedef struct ViamfgModel ViamfgModel;

typedef struct ViamfgSolution ViamfgSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`) and returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t viamfg_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *viamfg_version(void);

// Cell-centred interval `[0, length]` with `n` nodes.
//
// # Safety
// `out` must be a valid pointer.
enum ViamfgStatus viamfg_grid_interval(double length, size_t n, struct ViamfgGrid **out);

// Disk of the given radius on an `n x n` lattice.
//
// # Safety
// `out` must be a valid pointer.
enum ViamfgStatus viamfg_grid_disk(double radius, size_t n, struct ViamfgGrid **out);

// Number of grid nodes, 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t viamfg_grid_len(const struct ViamfgGrid *grid);

// Writes node coordinates as `(x, y)` pairs into `xy` (length `2 * len`).
//
// # Safety
// `grid` must be a live handle and `xy` must hold `2 * len` doubles.
enum ViamfgStatus viamfg_grid_nodes(const struct ViamfgGrid *grid, double *xy, size_t len);

// # Safety
// `grid` must be null or a handle not yet freed.
void viamfg_grid_free(struct ViamfgGrid *grid);

// Shipped model by id: `invariant-1d`, `decoupled-1d`, `uniform-1d` or
// `invariant-disk`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum ViamfgStatus viamfg_model_by_name(const char *name, struct ViamfgModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void viamfg_model_free(struct ViamfgModel *model);

// Solves the MFG system from node masses `m0` (length `len`) at time `t0`
// with time step `dt` and default solver settings.
//
// # Safety
// Handles must be live, `m0` must hold `len` doubles, `out` must be valid.
enum ViamfgStatus viamfg_solve_mfg(const struct ViamfgGrid *grid,
                                   const struct ViamfgModel *model,
                                   double t0,
                                   double dt,
                                   const double *m0,
                                   size_t len,
                                   struct ViamfgSolution **out);

// Number of stored time levels (`nt + 1`), 0 for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
size_t viamfg_solution_levels(const struct ViamfgSolution *sol);

// Picard iterations on the finest level, 0 for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
size_t viamfg_solution_picard_iters(const struct ViamfgSolution *sol);

// Values at time level `level` on the full grid (zero off the active set).
//
// # Safety
// `sol` must be live and `out` must hold `len` doubles.
enum ViamfgStatus viamfg_solution_values(const struct ViamfgSolution *sol,
                                         size_t level,
                                         double *out,
                                         size_t len);

// Node masses at time level `level` on the full grid.
//
// # Safety
// `sol` must be live and `out` must hold `len` doubles.
enum ViamfgStatus viamfg_solution_masses(const struct ViamfgSolution *sol,
                                         size_t level,
                                         double *out,
                                         size_t len);

// # Safety
// `sol` must be null or a handle not yet freed.
void viamfg_solution_free(struct ViamfgSolution *sol);

// Generalized Wasserstein-1 distance between two node-mass vectors.
//
// # Safety
// `grid` must be live, `a` and `b` must hold `len` doubles, `out` valid.
enum ViamfgStatus viamfg_wasserstein1(const struct ViamfgGrid *grid,
                                      const double *a,
                                      const double *b,
                                      size_t len,
                                      double *out);

// Runs an experiment file into `out_dir`. `exit_code` (optional) receives
// the CLI exit code the run would produce.
//
// # Safety
// Strings must be NUL-terminated; `exit_code` must be null or valid.
enum ViamfgStatus viamfg_run_experiment(const char *config_path,
                                        const char *out_dir,
                                        int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIAMFG_H */
