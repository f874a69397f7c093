#include <stdio.h>
#include <string.h>

#include "trajseg.h"

int main(void) {
    int64_t truth_labels[100];
    int64_t pred_labels[100];
    for (int i = 0; i < 100; i++) {
        truth_labels[i] = 7;
        pred_labels[i] = i < 40 ? 1 : 2;
    }
    TsSegmentation *truth = NULL;
    TsSegmentation *pred = NULL;
    if (ts_segmentation_from_labels(truth_labels, 100, &truth) != TS_STATUS_OK ||
        ts_segmentation_from_labels(pred_labels, 100, &pred) != TS_STATUS_OK) {
        fprintf(stderr, "from_labels: %s\n", ts_last_error());
        return 1;
    }
    double acc = 0.0;
    if (ts_seg_acc(pred, truth, 0.4, &acc) != TS_STATUS_OK || acc != 0.6) {
        fprintf(stderr, "seg_acc %f: %s\n", acc, ts_last_error());
        return 1;
    }
    double nmi = 0.0;
    if (ts_nmi(pred_labels, NULL, 100, &nmi) != TS_STATUS_NULL_POINTER || strlen(ts_last_error()) == 0) {
        fprintf(stderr, "expected a NULL-pointer status\n");
        return 1;
    }
    ts_segmentation_free(pred);
    ts_segmentation_free(truth);
    printf("trajseg %s ok\n", ts_version());
    return 0;
}
