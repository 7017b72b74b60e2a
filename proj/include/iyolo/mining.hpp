#pragma once

#include <cstddef>
#include <vector>

#include "iyolo/boxes.hpp"
#include "iyolo/rng.hpp"

namespace iyolo {

// IoU bands for sampled crops: Negative iou <= neg_max, PartFace
// neg_max < iou <= part_max, Positive iou > part_max.
struct SampleThresholds {
    double neg_max = 0.3;
    double part_max = 0.65;
};

enum class SampleCategory { Negative, PartFace, Positive };

const char* sample_category_name(SampleCategory c);

// Total partition of [0,1]; out-of-range values throw ValidationError.
SampleCategory categorize(double iou_value, const SampleThresholds& t = {});

struct MiningConfig {
    double hard_ratio = 0.7;
};

// Online hard example mining over one mini-batch: indices of the
// k = max(1, floor(hard_ratio * n)) largest losses, ordered by descending
// loss; equal losses keep input order. Empty input or NaN losses throw.
std::vector<std::size_t> ohem_select(const std::vector<double>& losses,
                                     const MiningConfig& cfg = {});

// Candidate training crop jittered around (or sampled away from) a ground
// truth, normalized coordinates. class_id is the matched gt class, -1 for
// crops in images without ground truths. regression holds (dx, dy, dw, dh)
// offsets from crop to gt and is meaningful for PartFace/Positive only.
struct CropSample {
    Box box;
    SampleCategory category = SampleCategory::Negative;
    int class_id = -1;
    double iou = 0;
    double regression[4] = {0, 0, 0, 0};
};

struct CropQuota {
    int negatives = 3;
    int part = 1;
    int positives = 1;
};

// Samples crops per ground truth under the quota: jittered windows (offsets
// up to half the gt size, scale in [0.8, 1.25]) for Positive/PartFace
// candidates, uniform random windows for Negatives, rejection-sampled until
// quotas are met or 100x the quota in attempts is spent. Deterministic for a
// given rng state. Images without ground truths yield only Negatives.
std::vector<CropSample> generate_crops(const std::vector<GroundTruth>& gts, Rng& rng,
                                       const CropQuota& quota = {},
                                       const SampleThresholds& thresholds = {});

}  // namespace iyolo
