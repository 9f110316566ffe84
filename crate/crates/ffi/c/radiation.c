/* Radiation flows for one origin through the C API.
 *
 *   cc -I include c/radiation.c -L ../../target/release -l:libflowfair_ffi.a -lm -lpthread -ldl
 *   ./a.out zones.csv
 */
#include <stdio.h>
#include <stdlib.h>

#include "flowfair.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s zones.csv\n", argv[0]);
        return 2;
    }
    FfTessellation *tess = NULL;
    if (ff_tessellation_load(argv[1], &tess) != FF_STATUS_OK) {
        fprintf(stderr, "error: %s\n", ff_last_error());
        return 1;
    }
    size_t n = ff_tessellation_len(tess);
    double *outflows = calloc(n, sizeof(double));
    outflows[0] = 90.0;
    FfFlowMatrix *flows = NULL;
    if (ff_generate_radiation(tess, outflows, n, &flows) != FF_STATUS_OK) {
        fprintf(stderr, "error: %s\n", ff_last_error());
        return 1;
    }
    for (size_t j = 1; j < n; j++) {
        double v = 0.0;
        ff_flows_get(flows, 0, j, &v);
        printf("0 -> %zu: %.6f\n", j, v);
    }
    ff_flows_free(flows);
    ff_tessellation_free(tess);
    free(outflows);
    return 0;
}
