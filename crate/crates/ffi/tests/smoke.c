#include <stdio.h>
#include <stdlib.h>
#include "viamfg.h"

int main(void) {
    ViamfgGrid *g = NULL;
    ViamfgModel *m = NULL;
    ViamfgSolution *s = NULL;
    if (viamfg_grid_interval(1.0, 32, &g) != VIAMFG_STATUS_OK) return 10;
    if (viamfg_model_by_name("decoupled-1d", &m) != VIAMFG_STATUS_OK) return 11;
    size_t n = viamfg_grid_len(g);
    double *m0 = calloc(n, sizeof(double));
    for (size_t k = n / 4; k < 3 * n / 4; k++) m0[k] = 1.0 / (double)(n / 2);
    if (viamfg_solve_mfg(g, m, 0.0, 0.05, m0, n, &s) != VIAMFG_STATUS_OK) return 12;
    double *u = calloc(n, sizeof(double));
    size_t levels = viamfg_solution_levels(s);
    if (viamfg_solution_masses(s, levels - 1, u, n) != VIAMFG_STATUS_OK) return 13;
    double mass = 0.0;
    for (size_t k = 0; k < n; k++) mass += u[k];
    char buf[256];
    if (viamfg_solution_values(s, levels, u, n) != VIAMFG_STATUS_INVALID_ARGUMENT) return 14;
    if (viamfg_last_error(buf, sizeof buf) == 0) return 15;
    printf("levels=%zu mass=%.15f\n", levels, mass);
    viamfg_solution_free(s);
    viamfg_model_free(m);
    viamfg_grid_free(g);
    free(m0);
    free(u);
    return (mass > 1.0 - 1e-10 && mass < 1.0 + 1e-10) ? 0 : 16;
}
