#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fgba.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        FgbaStatus s_ = (call);                                              \
        if (s_ != FGBA_STATUS_OK) {                                          \
            const char *m_ = fgba_last_error();                              \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, m_ ? m_ : "");      \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    FgbaRates rates;
    CHECK(fgba_rates_default(&rates));
    CHECK(fgba_rates_with_ratio_r(&rates, 1.0, &rates));

    FgbaGrid *grid = NULL;
    CHECK(fgba_grid_new_log(4.0, 10, &grid));
    size_t bins = fgba_grid_len(grid);

    FgbaGenerator *gen = NULL;
    CHECK(fgba_generator_build_mutant(&rates, grid, &gen));
    size_t n = fgba_generator_dim(gen);
    if (n != 5 * bins || fgba_generator_max_column_sum_error(gen) > 1e-12) {
        fprintf(stderr, "bad generator\n");
        return 1;
    }

    double *p = calloc(n, sizeof(double));
    p[4] = 1.0; /* bin 0, phase O */
    CHECK(fgba_solve(gen, p, n, 14.12, 1e-10, p));
    double total = 0.0;
    for (size_t i = 0; i < n; i++) total += p[i];

    if (fgba_solve(gen, p, n - 1, 1.0, 1e-10, p) != FGBA_STATUS_DIMENSION_MISMATCH) return 1;
    if (fgba_last_error() == NULL) return 1;

    printf("bins=%zu dim=%zu total=%.12f\n", bins, n, total);
    free(p);
    fgba_generator_free(gen);
    fgba_grid_free(grid);
    return fabs(total - 1.0) < 1e-8 ? 0 : 1;
}
