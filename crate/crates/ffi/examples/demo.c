/* Encodes two texts, runs one prediction and a paired t-test.
 * Usage: demo <model.ckpt> */
#include <stdio.h>
#include <stdlib.h>

#include "embedplan.h"

static int check(EpStatus s, const char *what) {
    if (s != EP_STATUS_OK) {
        const char *msg = ep_last_error();
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg ? msg : "?");
        return 1;
    }
    return 0;
}

int main(int argc, char **argv) {
    printf("embedplan %s\n", ep_version());

    double interp[] = {100.0, 98.2, 99.9, 99.4, 99.9, 98.6, 99.6, 99.7, 99.9};
    double extrap[] = {41.6, 24.8, 36.6, 55.2, 74.4, 62.7, 44.6, 49.2, 40.0};
    double t, p, d;
    if (check(ep_stats_paired_t(interp, extrap, 9, &t, &p, &d), "paired t")) return 1;
    printf("t=%.4f p=%.3e d=%.4f\n", t, p, d);

    if (argc < 2) return 0;

    EpModel *model = NULL;
    if (check(ep_model_load(argv[1], &model), "model load")) return 1;
    EpEncoder *enc = NULL;
    if (check(ep_encoder_new(256, 0x5eede4bed0000001ULL, &enc), "encoder")) return 1;

    float zs[256], za[256];
    double out[128];
    if (check(ep_encoder_encode(enc, "block a is on the table.", zs, 256), "encode")) return 1;
    if (check(ep_encoder_encode(enc, "(pick-up a)", za, 256), "encode")) return 1;
    if (check(ep_model_predict(model, zs, 256, za, 256, out, 128), "predict")) return 1;
    printf("params=%zu pred[0]=%.6f\n", ep_model_param_count(model), out[0]);

    ep_encoder_free(enc);
    ep_model_free(model);
    return 0;
}
