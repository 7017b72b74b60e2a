#include "iyolo/mining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "iyolo/errors.hpp"

namespace iyolo {

const char* sample_category_name(SampleCategory c) {
    switch (c) {
        case SampleCategory::Negative: return "negative";
        case SampleCategory::PartFace: return "part";
        case SampleCategory::Positive: return "positive";
    }
    return "?";
}

SampleCategory categorize(double iou_value, const SampleThresholds& t) {
    if (!(iou_value >= 0.0) || !(iou_value <= 1.0)) {
        throw ValidationError("iou " + std::to_string(iou_value) + " outside [0,1]");
    }
    if (!(t.neg_max > 0) || !(t.neg_max < t.part_max) || !(t.part_max < 1)) {
        throw ValidationError("thresholds must satisfy 0 < neg_max < part_max < 1");
    }
    if (iou_value <= t.neg_max) return SampleCategory::Negative;
    if (iou_value <= t.part_max) return SampleCategory::PartFace;
    return SampleCategory::Positive;
}

std::vector<std::size_t> ohem_select(const std::vector<double>& losses,
                                     const MiningConfig& cfg) {
    if (losses.empty()) throw ValidationError("hard-sample selection needs a non-empty batch");
    if (!(cfg.hard_ratio > 0) || !(cfg.hard_ratio <= 1)) {
        throw ValidationError("hard ratio must lie in (0,1]");
    }
    for (double l : losses) {
        if (std::isnan(l)) throw ValidationError("loss values must not be NaN");
    }
    const std::size_t n = losses.size();
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.hard_ratio * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Descending loss; equal losses keep the lower index first.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    order.resize(k);
    return order;
}

namespace {

Box clamp_box(Box b) {
    b.x1 = std::min(1.0, std::max(0.0, b.x1));
    b.y1 = std::min(1.0, std::max(0.0, b.y1));
    b.x2 = std::min(1.0, std::max(0.0, b.x2));
    b.y2 = std::min(1.0, std::max(0.0, b.y2));
    return b;
}

// Best-overlapping gt for a crop; index -1 when there are no gts.
int best_gt(const Box& crop, const std::vector<GroundTruth>& gts, double& best) {
    best = 0;
    int idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = iou(crop, gts[g].to_box());
        if (v > best || idx < 0) {
            best = v;
            idx = static_cast<int>(g);
        }
    }
    return idx;
}

CropSample make_sample(const Box& crop, const std::vector<GroundTruth>& gts,
                       const SampleThresholds& th) {
    CropSample s;
    s.box = crop;
    double overlap = 0;
    const int g = best_gt(crop, gts, overlap);
    s.iou = overlap;
    s.category = categorize(overlap, th);
    if (g >= 0) {
        s.class_id = gts[g].class_id;
        if (s.category != SampleCategory::Negative) {
            const double cw = crop.x2 - crop.x1, ch = crop.y2 - crop.y1;
            const double ccx = (crop.x1 + crop.x2) / 2, ccy = (crop.y1 + crop.y2) / 2;
            s.regression[0] = gts[g].cx - ccx;
            s.regression[1] = gts[g].cy - ccy;
            s.regression[2] = std::log(gts[g].w / std::max(cw, 1e-9));
            s.regression[3] = std::log(gts[g].h / std::max(ch, 1e-9));
        }
    } else {
        s.class_id = -1;
    }
    return s;
}

}  // namespace

std::vector<CropSample> generate_crops(const std::vector<GroundTruth>& gts, Rng& rng,
                                       const CropQuota& quota,
                                       const SampleThresholds& thresholds) {
    if (quota.negatives < 0 || quota.part < 0 || quota.positives < 0) {
        throw ValidationError("crop quotas must be >= 0");
    }
    std::vector<CropSample> out;

    auto jittered = [&](const GroundTruth& gt) {
        const double dx = rng.uniform(-0.5, 0.5) * gt.w;
        const double dy = rng.uniform(-0.5, 0.5) * gt.h;
        const double scale = rng.uniform(0.8, 1.25);
        const double w = gt.w * scale, h = gt.h * scale;
        const double cx = gt.cx + dx, cy = gt.cy + dy;
        return clamp_box(Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
    };

    auto random_window = [&]() {
        const double w = rng.uniform(0.05, 0.6);
        const double h = rng.uniform(0.05, 0.6);
        const double x = rng.uniform(0.0, 1.0 - w);
        const double y = rng.uniform(0.0, 1.0 - h);
        return Box{x, y, x + w, y + h};
    };

    // Jittered candidates around each gt fill the positive and part quotas.
    for (const GroundTruth& gt : gts) {
        int have_pos = 0, have_part = 0;
        const int budget = 100 * (quota.positives + quota.part + 1);
        for (int attempt = 0;
             attempt < budget && (have_pos < quota.positives || have_part < quota.part);
             ++attempt) {
            const CropSample s = make_sample(jittered(gt), gts, thresholds);
            if (s.category == SampleCategory::Positive && have_pos < quota.positives) {
                out.push_back(s);
                ++have_pos;
            } else if (s.category == SampleCategory::PartFace && have_part < quota.part) {
                out.push_back(s);
                ++have_part;
            }
        }
    }

    // Uniform windows fill the negative quota (per image, not per gt).
    int have_neg = 0;
    const int budget = 100 * (quota.negatives + 1);
    for (int attempt = 0; attempt < budget && have_neg < quota.negatives; ++attempt) {
        const CropSample s = make_sample(random_window(), gts, thresholds);
        if (s.category == SampleCategory::Negative) {
            out.push_back(s);
            ++have_neg;
        }
    }
    return out;
}

}  // namespace iyolo
