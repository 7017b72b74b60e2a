#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "iyolo/boxes.hpp"
#include "iyolo/errors.hpp"

using namespace iyolo;

namespace {

const DecodedBox& box_at(const std::vector<DecodedBox>& all, int anchor, int cx, int cy,
                         int cells) {
    for (const DecodedBox& d : all) {
        if (d.anchor == anchor && d.cell_x == cx && d.cell_y == cy) return d;
    }
    (void)cells;
    REQUIRE(false);
    return all.front();
}

// Independent greedy reference: per class, repeatedly take the best remaining
// box and erase its heavy overlaps.
std::vector<std::tuple<int, int, int>> nms_oracle(std::vector<DecodedBox> dets, double thr,
                                                  int cells) {
    std::sort(dets.begin(), dets.end(), [&](const DecodedBox& a, const DecodedBox& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.cell_index(cells) != b.cell_index(cells)) {
            return a.cell_index(cells) < b.cell_index(cells);
        }
        return a.anchor < b.anchor;
    });
    std::vector<std::tuple<int, int, int>> kept;
    std::vector<bool> removed(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (removed[i]) continue;
        kept.emplace_back(dets[i].anchor, dets[i].cell_x, dets[i].cell_y);
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (removed[j] || dets[j].class_id != dets[i].class_id) continue;
            if (iou(dets[i].corners_grid(), dets[j].corners_grid()) > thr) removed[j] = true;
        }
    }
    return kept;
}

DecodedBox make_det(double bx, double by, double bw, double bh, double conf, int class_id,
                    int anchor, int cells) {
    DecodedBox d;
    d.bx = bx;
    d.by = by;
    d.bw = bw;
    d.bh = bh;
    d.confidence = conf;
    d.objectness = conf;
    d.class_probs.assign(3, 0.1);
    d.class_probs[class_id] = 1.0;
    d.class_id = class_id;
    d.cell_x = std::min(cells - 1, std::max(0, static_cast<int>(bx)));
    d.cell_y = std::min(cells - 1, std::max(0, static_cast<int>(by)));
    d.anchor = anchor;
    return d;
}

}  // namespace

TEST_CASE("iou: identity, disjoint, hand geometry, symmetry") {
    const Box a{0, 0, 2, 2};
    const Box b{1, 1, 3, 3};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{3, 3, 4, 4}) == 0.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(iou(a, b) == iou(b, a));

    // Degenerate boxes never overlap anything, themselves included.
    const Box flat{0.3, 0.3, 0.3, 0.8};
    CHECK(iou(flat, flat) == 0.0);
    CHECK(iou(flat, a) == 0.0);

    double prev = 1.0;
    for (int step = 1; step <= 10; ++step) {
        const double d = step * 0.1;
        const double v = iou(Box{0, 0, 1, 1}, Box{d, 0, 1 + d, 1});
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev == 0.0);
}

TEST_CASE("decode: zero logits center the anchor box in its cell") {
    const std::vector<Anchor> anchors = {{2.0f, 3.0f}};
    const GridSpec grid{13};
    const TensorD raw(6, 13, 13, 0.0);
    const std::vector<DecodedBox> all = decode(raw, anchors, grid);
    REQUIRE(all.size() == 169);

    const DecodedBox& d = box_at(all, 0, 5, 7, 13);
    CHECK(d.bx == doctest::Approx(5.5).epsilon(1e-12));
    CHECK(d.by == doctest::Approx(7.5).epsilon(1e-12));
    CHECK(d.bw == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(d.bh == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(d.objectness == 0.5);
    CHECK(d.confidence == 0.25);
}

TEST_CASE("decode: full head yields 845 boxes and survives extreme logits") {
    const std::vector<Anchor> anchors = {
        {1.08f, 1.19f}, {3.42f, 4.41f}, {6.63f, 11.38f}, {9.42f, 5.11f}, {16.62f, 10.52f}};
    Rng rng(12);
    Tensor raw(40, 13, 13);
    for (float& v : raw.data) v = rng.uniform_f(-1e4f, 1e4f);
    const std::vector<DecodedBox> all = decode(raw, anchors, GridSpec{13});
    REQUIRE(all.size() == 845);
    for (const DecodedBox& d : all) {
        CHECK(d.bx > d.cell_x);
        CHECK(d.bx < d.cell_x + 1);
        CHECK(d.by > d.cell_y);
        CHECK(d.by < d.cell_y + 1);
        CHECK(d.bw > 0);
        CHECK(d.bh > 0);
        CHECK(std::isfinite(d.bw));
        CHECK(std::isfinite(d.bh));
        CHECK(d.objectness > 0);
        CHECK(d.objectness < 1);
        for (double p : d.class_probs) {
            CHECK(p > 0);
            CHECK(p < 1);
        }
        CHECK(d.confidence == d.objectness * d.class_probs[d.class_id]);
    }

    CHECK_THROWS_AS(decode(Tensor(7, 13, 13), anchors, GridSpec{13}), ShapeError);
    CHECK_THROWS_AS(decode(Tensor(40, 12, 13), anchors, GridSpec{13}), ShapeError);
}

TEST_CASE("encode: exact inverse of the worked decode example") {
    const Anchor anchor{2.0f, 3.0f};
    const EncodedBox t = encode(5.5, 7.5, 2.0, 3.0, 5, 7, anchor);
    CHECK(t.tx == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.ty == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.tw == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(t.th == doctest::Approx(0.0).epsilon(1e-9));

    const EncodedBox half = encode(5.5, 7.5, 1.0, 3.0, 5, 7, anchor);
    CHECK(half.tw == doctest::Approx(std::log(0.5)).epsilon(1e-12));

    CHECK_THROWS_AS(encode(4.3, 7.5, 1, 1, 5, 7, anchor), ValidationError);
    CHECK_THROWS_AS(encode(5.5, 7.5, 0, 1, 5, 7, anchor), ValidationError);
    // Boundary centers clamp instead of blowing up.
    const EncodedBox edge = encode(5.0, 8.0, 1, 1, 5, 7, anchor);
    CHECK(std::isfinite(edge.tx));
    CHECK(std::isfinite(edge.ty));
}

TEST_CASE("encode and decode round-trip within 1e-6") {
    const std::vector<Anchor> anchors = {{1.2f, 0.8f}, {3.0f, 2.5f}};
    const GridSpec grid{4};
    Rng rng(77);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int a = rng.uniform_int(0, 1);
        const int cx = rng.uniform_int(0, 3);
        const int cy = rng.uniform_int(0, 3);
        const double bx = cx + rng.uniform(0.01, 0.99);
        const double by = cy + rng.uniform(0.01, 0.99);
        const double bw = anchors[a].w * std::exp(rng.uniform(-2.0, 2.0));
        const double bh = anchors[a].h * std::exp(rng.uniform(-2.0, 2.0));

        const EncodedBox t = encode(bx, by, bw, bh, cx, cy, anchors[a]);
        TensorD raw(14, 4, 4, 0.0);
        const int base = a * 7;
        raw.at(base + 0, cy, cx) = t.tx;
        raw.at(base + 1, cy, cx) = t.ty;
        raw.at(base + 2, cy, cx) = t.tw;
        raw.at(base + 3, cy, cx) = t.th;
        const std::vector<DecodedBox> all = decode(raw, anchors, grid);
        const DecodedBox& d = box_at(all, a, cx, cy, 4);
        worst = std::max({worst, std::fabs(d.bx - bx), std::fabs(d.by - by),
                          std::fabs(d.bw - bw) / bw, std::fabs(d.bh - bh) / bh});
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("nms: basics") {
    const GridSpec grid{13};
    std::vector<DecodedBox> one = {make_det(5.5, 5.5, 2, 2, 0.7, 0, 0, 13)};
    const auto kept_one = nms(one, 0.45, 13);
    REQUIRE(kept_one.size() == 1);
    CHECK(kept_one[0].confidence == 0.7);

    // Same class, IoU well above the threshold: only the stronger survives.
    std::vector<DecodedBox> pair = {make_det(5.5, 5.5, 2, 2, 0.8, 1, 0, 13),
                                    make_det(5.6, 5.5, 2, 2, 0.9, 1, 1, 13)};
    const auto kept_pair = nms(pair, 0.45, 13);
    REQUIRE(kept_pair.size() == 1);
    CHECK(kept_pair[0].confidence == 0.9);

    // Different classes never suppress each other.
    std::vector<DecodedBox> cross = {make_det(5.5, 5.5, 2, 2, 0.8, 0, 0, 13),
                                     make_det(5.5, 5.5, 2, 2, 0.9, 1, 1, 13)};
    CHECK(nms(cross, 0.45, 13).size() == 2);

    CHECK(nms({}, 0.45, 13).empty());
    (void)grid;
}

TEST_CASE("nms matches an independent greedy reference on random boxes") {
    for (uint32_t seed = 1; seed <= 10; ++seed) {
        CAPTURE(seed);
        Rng rng(seed * 31 + 7);
        std::vector<DecodedBox> dets;
        dets.reserve(500);
        for (int i = 0; i < 500; ++i) {
            const double bx = rng.uniform(0.5, 12.5);
            const double by = rng.uniform(0.5, 12.5);
            const double bw = rng.uniform(0.3, 4.0);
            const double bh = rng.uniform(0.3, 4.0);
            const double conf = rng.uniform(0.0, 1.0);
            const int cls = rng.uniform_int(0, 2);
            dets.push_back(make_det(bx, by, bw, bh, conf, cls, rng.uniform_int(0, 4), 13));
        }
        const auto expect = nms_oracle(dets, 0.45, 13);
        const auto got = nms(dets, 0.45, 13);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::make_tuple(got[i].anchor, got[i].cell_x, got[i].cell_y) == expect[i]);
        }
        // Output sorted by confidence, survivors pairwise acceptable.
        for (std::size_t i = 1; i < got.size(); ++i) {
            CHECK(got[i - 1].confidence >= got[i].confidence);
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            for (std::size_t j = i + 1; j < got.size(); ++j) {
                if (got[i].class_id != got[j].class_id) continue;
                CHECK(iou(got[i].corners_grid(), got[j].corners_grid()) <= 0.45);
            }
        }
    }
}

TEST_CASE("objectness targets: best prediction positive, near misses ignored") {
    const Box gt{0.4, 0.4, 0.6, 0.6};
    const std::vector<Box> preds = {
        {0.4, 0.4, 0.6, 0.6},    // exact: best for the gt
        {0.42, 0.4, 0.62, 0.6},  // strong overlap but not best
        {0.8, 0.8, 0.9, 0.9},    // disjoint
    };
    REQUIRE(iou(preds[1], gt) > 0.5);
    const auto targets = objectness_targets(preds, {gt}, 0.5);
    REQUIRE(targets.size() == 3);
    CHECK(targets[0].kind == ObjectnessTarget::Kind::Positive);
    CHECK(targets[0].gt_index == 0);
    CHECK(targets[1].kind == ObjectnessTarget::Kind::Ignore);
    CHECK(targets[2].kind == ObjectnessTarget::Kind::Negative);

    // No ground truths: everything is negative.
    for (const auto& t : objectness_targets(preds, {}, 0.5)) {
        CHECK(t.kind == ObjectnessTarget::Kind::Negative);
    }

    // One prediction that is best for two gts keeps the first.
    const std::vector<Box> gts2 = {{0.4, 0.4, 0.6, 0.6}, {0.41, 0.4, 0.61, 0.6}};
    const auto t2 = objectness_targets({preds[0]}, gts2, 0.5);
    CHECK(t2[0].kind == ObjectnessTarget::Kind::Positive);
    CHECK(t2[0].gt_index == 0);
}
