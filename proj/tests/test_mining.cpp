#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "iyolo/errors.hpp"
#include "iyolo/mining.hpp"

using namespace iyolo;

namespace {

// Full-sort reference for ohem_select: order (loss desc, index asc), keep k.
std::vector<std::size_t> ohem_oracle(const std::vector<double>& losses, double ratio) {
    std::vector<std::size_t> order(losses.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (losses[a] != losses[b]) return losses[a] > losses[b];
        return a < b;
    });
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(losses.size()))));
    order.resize(k);
    return order;
}

int count_category(const std::vector<CropSample>& samples, SampleCategory c) {
    return static_cast<int>(std::count_if(samples.begin(), samples.end(),
                                          [&](const CropSample& s) { return s.category == c; }));
}

}  // namespace

TEST_CASE("categorize: band boundaries are closed on the low side") {
    const double above_neg = std::nextafter(0.3, 1.0);
    const double above_part = std::nextafter(0.65, 1.0);
    CHECK(categorize(0.0) == SampleCategory::Negative);
    CHECK(categorize(0.3) == SampleCategory::Negative);
    CHECK(categorize(above_neg) == SampleCategory::PartFace);
    CHECK(categorize(0.65) == SampleCategory::PartFace);
    CHECK(categorize(above_part) == SampleCategory::Positive);
    CHECK(categorize(1.0) == SampleCategory::Positive);

    CHECK_THROWS_AS(categorize(-0.01), ValidationError);
    CHECK_THROWS_AS(categorize(1.01), ValidationError);
    CHECK_THROWS_AS(categorize(std::numeric_limits<double>::quiet_NaN()), ValidationError);
    CHECK_THROWS_AS(categorize(0.5, SampleThresholds{0.7, 0.3}), ValidationError);
    CHECK_THROWS_AS(categorize(0.5, SampleThresholds{0.0, 0.5}), ValidationError);

    CHECK(std::strcmp(sample_category_name(SampleCategory::Negative), "negative") == 0);
    CHECK(std::strcmp(sample_category_name(SampleCategory::PartFace), "part") == 0);
    CHECK(std::strcmp(sample_category_name(SampleCategory::Positive), "positive") == 0);
}

TEST_CASE("categorize honors custom thresholds") {
    const SampleThresholds t{0.2, 0.8};
    CHECK(categorize(0.2, t) == SampleCategory::Negative);
    CHECK(categorize(0.21, t) == SampleCategory::PartFace);
    CHECK(categorize(0.8, t) == SampleCategory::PartFace);
    CHECK(categorize(0.81, t) == SampleCategory::Positive);
}

TEST_CASE("ohem_select: worked example keeps the seven hardest of ten") {
    const std::vector<double> losses = {0.9, 0.1, 0.5, 0.7, 0.3, 0.2, 0.8, 0.4, 0.6, 1.0};
    const std::vector<std::size_t> want = {9, 0, 6, 3, 8, 2, 7};
    CHECK(ohem_select(losses) == want);
}

TEST_CASE("ohem_select: edge cases") {
    CHECK(ohem_select({3.5}) == std::vector<std::size_t>{0});  // k floors to 0, clamps to 1

    // Ties keep input order.
    const std::vector<double> equal(10, 1.25);
    CHECK(ohem_select(equal) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});

    MiningConfig all;
    all.hard_ratio = 1.0;
    CHECK(ohem_select({1, 3, 2}, all) == std::vector<std::size_t>{1, 2, 0});

    CHECK_THROWS_AS(ohem_select({}), ValidationError);
    CHECK_THROWS_AS(ohem_select({1.0, std::numeric_limits<double>::quiet_NaN()}),
                    ValidationError);
    MiningConfig bad;
    bad.hard_ratio = 0.0;
    CHECK_THROWS_AS(ohem_select({1.0}, bad), ValidationError);
    bad.hard_ratio = 1.5;
    CHECK_THROWS_AS(ohem_select({1.0}, bad), ValidationError);
}

TEST_CASE("ohem_select agrees with a full-sort oracle") {
    Rng rng(2024);
    for (int batch = 0; batch < 1000; ++batch) {
        const int n = rng.uniform_int(1, 50);
        std::vector<double> losses(n);
        for (double& l : losses) {
            // Coarse quantization forces plenty of exact ties.
            l = rng.uniform_int(0, 12) * 0.125;
        }
        const std::vector<std::size_t> got = ohem_select(losses);
        CAPTURE(batch);
        REQUIRE(got == ohem_oracle(losses, 0.7));

        // Every selected loss dominates every unselected one.
        std::vector<bool> picked(losses.size(), false);
        double min_sel = std::numeric_limits<double>::infinity();
        for (std::size_t i : got) {
            picked[i] = true;
            min_sel = std::min(min_sel, losses[i]);
        }
        for (std::size_t i = 0; i < losses.size(); ++i) {
            if (!picked[i]) CHECK(losses[i] <= min_sel);
        }
    }
}

TEST_CASE("generate_crops: quotas are met exactly around a central object") {
    const std::vector<GroundTruth> gts = {{1, 0.5, 0.5, 0.3, 0.3}};
    Rng rng(77);
    const std::vector<CropSample> samples = generate_crops(gts, rng);
    CHECK(count_category(samples, SampleCategory::Negative) == 3);
    CHECK(count_category(samples, SampleCategory::PartFace) == 1);
    CHECK(count_category(samples, SampleCategory::Positive) == 1);
    CHECK(samples.size() == 5);

    CropQuota big;
    big.negatives = 15;
    big.part = 5;
    big.positives = 5;
    Rng rng2(78);
    const std::vector<CropSample> many = generate_crops(gts, rng2, big);
    CHECK(count_category(many, SampleCategory::Negative) == 15);
    CHECK(count_category(many, SampleCategory::PartFace) == 5);
    CHECK(count_category(many, SampleCategory::Positive) == 5);
}

TEST_CASE("generate_crops: samples are self-consistent") {
    const std::vector<GroundTruth> gts = {{0, 0.35, 0.4, 0.25, 0.3}, {2, 0.72, 0.66, 0.2, 0.22}};
    Rng rng(91);
    CropQuota quota;
    quota.negatives = 6;
    quota.part = 2;
    quota.positives = 2;
    const std::vector<CropSample> samples = generate_crops(gts, rng, quota);

    CHECK(count_category(samples, SampleCategory::Positive) == 2 * quota.positives);
    CHECK(count_category(samples, SampleCategory::PartFace) == 2 * quota.part);
    CHECK(count_category(samples, SampleCategory::Negative) == quota.negatives);

    for (const CropSample& s : samples) {
        CHECK(s.box.x1 >= 0);
        CHECK(s.box.y1 >= 0);
        CHECK(s.box.x2 <= 1);
        CHECK(s.box.y2 <= 1);
        CHECK(s.box.x2 > s.box.x1);
        CHECK(s.box.y2 > s.box.y1);

        // Recompute the best-overlap label independently.
        double best = 0;
        int best_g = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(s.box, gts[g].to_box());
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        CHECK(s.iou == doctest::Approx(best).epsilon(1e-12));
        CHECK(s.category == categorize(best));
        CHECK(s.class_id == gts[best_g].class_id);

        if (s.category != SampleCategory::Negative) {
            const GroundTruth& gt = gts[best_g];
            const double cw = s.box.x2 - s.box.x1, ch = s.box.y2 - s.box.y1;
            const double ccx = (s.box.x1 + s.box.x2) / 2, ccy = (s.box.y1 + s.box.y2) / 2;
            CHECK(s.regression[0] == doctest::Approx(gt.cx - ccx).epsilon(1e-12));
            CHECK(s.regression[1] == doctest::Approx(gt.cy - ccy).epsilon(1e-12));
            CHECK(cw * std::exp(s.regression[2]) == doctest::Approx(gt.w).epsilon(1e-9));
            CHECK(ch * std::exp(s.regression[3]) == doctest::Approx(gt.h).epsilon(1e-9));
        } else {
            CHECK(s.regression[0] == 0);
            CHECK(s.regression[3] == 0);
        }
    }
}

TEST_CASE("generate_crops: deterministic for a fixed seed") {
    const std::vector<GroundTruth> gts = {{1, 0.45, 0.55, 0.28, 0.33}};
    Rng a(5), b(5), c(6);
    const auto s1 = generate_crops(gts, a);
    const auto s2 = generate_crops(gts, b);
    const auto s3 = generate_crops(gts, c);
    REQUIRE(s1.size() == s2.size());
    bool identical = true;
    for (std::size_t i = 0; i < s1.size(); ++i) {
        identical = identical && std::memcmp(&s1[i].box, &s2[i].box, sizeof(Box)) == 0 &&
                    s1[i].category == s2[i].category && s1[i].iou == s2[i].iou;
    }
    CHECK(identical);

    bool same_as_other_seed = s1.size() == s3.size();
    if (same_as_other_seed) {
        same_as_other_seed = std::memcmp(&s1[0].box, &s3[0].box, sizeof(Box)) == 0;
    }
    CHECK_FALSE(same_as_other_seed);
}

TEST_CASE("generate_crops: images without objects yield only negatives") {
    Rng rng(14);
    CropQuota quota;
    quota.negatives = 4;
    quota.part = 2;
    quota.positives = 5;
    const std::vector<CropSample> samples = generate_crops({}, rng, quota);
    REQUIRE(samples.size() == 4);
    for (const CropSample& s : samples) {
        CHECK(s.category == SampleCategory::Negative);
        CHECK(s.class_id == -1);
        CHECK(s.iou == 0);
        CHECK(s.regression[2] == 0);
    }

    Rng rng2(14);
    CHECK_THROWS_AS(generate_crops({}, rng2, CropQuota{-1, 0, 0}), ValidationError);
}
