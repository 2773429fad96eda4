#include <stdio.h>
#include <stdlib.h>
#include "polypseg.h"

/* Usage: smoke <checkpoint-dir> <size>. Prints the status of each call and
 * the mean probability. */
int main(int argc, char **argv) {
    if (argc != 3) return 64;
    size_t n = (size_t)atoi(argv[2]);
    PsModel *model = NULL;
    PsStatus st = ps_model_load(argv[1], &model);
    printf("load %d\n", (int)st);
    if (st != PS_STATUS_OK) {
        printf("error %s\n", ps_last_error());
        return 1;
    }
    double *rgb = malloc(3 * n * n * sizeof(double));
    double *prob = malloc(n * n * sizeof(double));
    for (size_t i = 0; i < 3 * n * n; i++) rgb[i] = (double)(i % 17) / 16.0;
    st = ps_model_infer(model, rgb, n, n, prob);
    double mean = 0.0;
    for (size_t i = 0; i < n * n; i++) mean += prob[i];
    printf("infer %d %.17g\n", (int)st, mean / (double)(n * n));

    uint8_t pred[4] = {1, 1, 0, 0}, gt[4] = {1, 0, 0, 0};
    PsRegionMetrics r;
    st = ps_region_metrics(pred, gt, 2, 2, &r);
    printf("region %d %.17g %.17g\n", (int)st, r.dice, r.iou);

    st = ps_model_infer(model, rgb, 10, 10, prob);
    printf("bad %d %s\n", (int)st, ps_last_error());

    ps_model_free(model);
    free(rgb);
    free(prob);
    printf("version %s\n", ps_version());
    return 0;
}
