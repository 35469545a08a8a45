/* Minimal consumer of the C interface: loads a model preset, prints its
 * byte totals, plans a policy, and simulates it.
 *
 * Build from the workspace root:
 *   cargo build -p tiergen-ffi --release
 *   cc crates/ffi/examples/footprint.c \
 *      -Icrates/ffi/include -Ltarget/release -ltiergen_ffi -lm -o footprint
 */

#include <inttypes.h>
#include <stdio.h>

#include "tiergen.h"

static int check(TgStatus status, const char *what) {
    if (status != TG_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status, tg_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    TgModel *model = NULL;
    TgHardware *hw = NULL;
    uint64_t weights = 0, kv = 0;
    char *plan = NULL, *sim = NULL;
    int rc = 1;

    if (check(tg_model_preset("opt-30b", &model), "tg_model_preset"))
        goto done;
    if (check(tg_hardware_preset("t4-gcp", &hw), "tg_hardware_preset"))
        goto done;
    if (check(tg_weight_bytes(model, &weights), "tg_weight_bytes"))
        goto done;
    if (check(tg_kv_cache_peak_bytes(model, 64, 512, 32, &kv),
              "tg_kv_cache_peak_bytes"))
        goto done;
    printf("weights: %" PRIu64 " bytes\n", weights);
    printf("kv peak at batch 64: %" PRIu64 " bytes\n", kv);

    if (check(tg_plan_json(model, hw, 512, 32,
                           "{\"gbs_candidates\": [8, 16], \"max_num_gpu_batches\": 4}",
                           &plan),
              "tg_plan_json"))
        goto done;
    printf("plan: %s\n", plan);

    /* A deliberately oversized all-GPU placement still prices out when OOM
     * is allowed. */
    if (check(tg_simulate_json(model, hw, 512, 32,
                               "{\"gbs\": 8, \"num_gpu_batches\": 1,"
                               " \"wg\": 1.0, \"wc\": 0.0, \"wd\": 0.0,"
                               " \"cg\": 1.0, \"cc\": 0.0, \"cd\": 0.0,"
                               " \"hg\": 1.0, \"hc\": 0.0, \"hd\": 0.0}",
                               true, &sim),
              "tg_simulate_json"))
        goto done;
    printf("all-GPU simulation: %s\n", sim);
    rc = 0;

done:
    tg_string_free(plan);
    tg_string_free(sim);
    tg_model_free(model);
    tg_hardware_free(hw);
    return rc;
}
