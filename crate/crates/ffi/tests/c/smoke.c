#include <math.h>
#include <stdio.h>
#include "periocular_eval.h"

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            fprintf(stderr, "check failed: %s (line %d)\n", #cond, __LINE__); \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    double x[3] = {1.0, 0.0, 2.0};
    double y[3] = {1.0, 1.0, 0.0};
    double out = 0.0;
    CHECK(pe_chi2_distance(x, y, 3, &out) == PE_STATUS_OK);
    CHECK(out == 3.0);

    double zero[2] = {0.0, 0.0};
    CHECK(pe_cosine_similarity(zero, y, 2, &out) == PE_STATUS_DOMAIN);
    CHECK(pe_last_error_message() != NULL);

    double genuine[4] = {0.9, 0.8, 0.7, 0.3};
    double impostor[4] = {0.1, 0.2, 0.75, 0.4};
    double eer = 0.0, thr = 0.0;
    CHECK(pe_compute_eer(genuine, 4, impostor, 4, &eer, &thr) == PE_STATUS_OK);
    CHECK(eer == 0.25);

    uint64_t g = 0, imp = 0;
    CHECK(pe_protocol_counts(86, 5, &g, &imp) == PE_STATUS_OK);
    CHECK(g == 8600 && imp == 438600);

    double w[2] = {1.0, 2.0};
    PeFusionModel *model = NULL;
    CHECK(pe_fusion_model_new(-1.0, w, 2, &model) == PE_STATUS_OK);
    double s[2] = {3.0, 4.0};
    CHECK(pe_fusion_model_apply(model, s, 1, 2, &out) == PE_STATUS_OK);
    CHECK(out == 10.0);
    pe_fusion_model_free(model);

    printf("c abi ok (version %s)\n", pe_version());
    return 0;
}
