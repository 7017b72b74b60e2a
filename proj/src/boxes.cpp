#include "iyolo/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iyolo/errors.hpp"
#include "iyolo/kernels.hpp"

namespace iyolo {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kExpClamp = 60.0;  // exp stays finite, boxes stay > 0

double clamped_sigmoid(double x) {
    const double s = sigmoid_scalar(x);
    return std::min(1.0 - kProbFloor, std::max(kProbFloor, s));
}

double clamped_exp(double x) {
    return std::exp(std::min(kExpClamp, std::max(-kExpClamp, x)));
}

}  // namespace

Box DecodedBox::to_normalized(int grid_cells) const {
    const double s = static_cast<double>(grid_cells);
    Box b{(bx - bw / 2) / s, (by - bh / 2) / s, (bx + bw / 2) / s, (by + bh / 2) / s};
    b.x1 = std::min(1.0, std::max(0.0, b.x1));
    b.y1 = std::min(1.0, std::max(0.0, b.y1));
    b.x2 = std::min(1.0, std::max(0.0, b.x2));
    b.y2 = std::min(1.0, std::max(0.0, b.y2));
    return b;
}

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0 || iy <= 0) return 0;
    const double inter = ix * iy;
    const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    const double uni = area_a + area_b - inter;
    if (uni <= 0) return 0;
    return inter / uni;
}

template <typename T>
std::vector<DecodedBox> decode(const TensorT<T>& raw, const std::vector<Anchor>& anchors,
                               const GridSpec& grid) {
    const int a_count = static_cast<int>(anchors.size());
    const int s = grid.cells;
    if (raw.height != s || raw.width != s) {
        throw ShapeError("detection tensor is " + raw.shape_str() + ", grid wants " +
                         std::to_string(s) + "x" + std::to_string(s));
    }
    if (a_count == 0 || raw.channels % a_count != 0) {
        throw ShapeError("detection tensor channels " + std::to_string(raw.channels) +
                         " are not a multiple of the anchor count");
    }
    const int num_classes = raw.channels / a_count - 5;
    if (num_classes < 1) {
        throw ShapeError("detection tensor has no class channels");
    }
    std::vector<DecodedBox> out;
    out.reserve(static_cast<std::size_t>(a_count) * s * s);
    for (int a = 0; a < a_count; ++a) {
        const int base = a * (5 + num_classes);
        for (int cy = 0; cy < s; ++cy) {
            for (int cx = 0; cx < s; ++cx) {
                DecodedBox d;
                d.anchor = a;
                d.cell_x = cx;
                d.cell_y = cy;
                d.bx = clamped_sigmoid(static_cast<double>(raw.at(base + 0, cy, cx))) + cx;
                d.by = clamped_sigmoid(static_cast<double>(raw.at(base + 1, cy, cx))) + cy;
                d.bw = anchors[a].w * clamped_exp(static_cast<double>(raw.at(base + 2, cy, cx)));
                d.bh = anchors[a].h * clamped_exp(static_cast<double>(raw.at(base + 3, cy, cx)));
                d.objectness = clamped_sigmoid(static_cast<double>(raw.at(base + 4, cy, cx)));
                d.class_probs.resize(num_classes);
                int best = 0;
                for (int k = 0; k < num_classes; ++k) {
                    d.class_probs[k] =
                        clamped_sigmoid(static_cast<double>(raw.at(base + 5 + k, cy, cx)));
                    if (d.class_probs[k] > d.class_probs[best]) best = k;
                }
                d.class_id = best;
                d.confidence = d.objectness * d.class_probs[best];
                out.push_back(std::move(d));
            }
        }
    }
    return out;
}

EncodedBox encode(double bx, double by, double bw, double bh, int cell_x, int cell_y,
                  const Anchor& anchor) {
    const double ox = bx - cell_x;
    const double oy = by - cell_y;
    if (ox < 0 || ox > 1 || oy < 0 || oy > 1) {
        throw ValidationError("box center (" + std::to_string(bx) + "," + std::to_string(by) +
                              ") lies outside cell (" + std::to_string(cell_x) + "," +
                              std::to_string(cell_y) + ")");
    }
    if (!(bw > 0) || !(bh > 0)) {
        throw ValidationError("box size must be positive");
    }
    if (!(anchor.w > 0) || !(anchor.h > 0)) {
        throw ValidationError("anchor size must be positive");
    }
    auto logit = [](double p) {
        p = std::min(1.0 - 1e-6, std::max(1e-6, p));
        return std::log(p / (1.0 - p));
    };
    EncodedBox e;
    e.tx = logit(ox);
    e.ty = logit(oy);
    e.tw = std::log(bw / anchor.w);
    e.th = std::log(bh / anchor.h);
    return e;
}

std::vector<DecodedBox> nms(std::vector<DecodedBox> dets, double iou_threshold,
                            int grid_cells) {
    auto before = [grid_cells](const DecodedBox& a, const DecodedBox& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.cell_index(grid_cells) != b.cell_index(grid_cells)) {
            return a.cell_index(grid_cells) < b.cell_index(grid_cells);
        }
        return a.anchor < b.anchor;
    };
    std::sort(dets.begin(), dets.end(), before);
    std::vector<DecodedBox> kept;
    std::vector<bool> dead(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        const Box bi = dets[i].corners_grid();
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (dead[j] || dets[j].class_id != dets[i].class_id) continue;
            if (iou(bi, dets[j].corners_grid()) > iou_threshold) dead[j] = true;
        }
    }
    return kept;
}

std::vector<ObjectnessTarget> objectness_targets(const std::vector<Box>& predictions,
                                                 const std::vector<Box>& gts,
                                                 double ignore_threshold) {
    std::vector<ObjectnessTarget> out(predictions.size());
    if (gts.empty()) return out;

    // Best prediction per gt (first wins ties) becomes that gt's positive.
    std::vector<int> best_pred(gts.size(), -1);
    std::vector<double> best_iou(gts.size(), -1);
    for (std::size_t p = 0; p < predictions.size(); ++p) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(predictions[p], gts[g]);
            if (v > best_iou[g]) {
                best_iou[g] = v;
                best_pred[g] = static_cast<int>(p);
            }
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (best_pred[g] < 0) continue;
        ObjectnessTarget& t = out[best_pred[g]];
        if (t.kind == ObjectnessTarget::Kind::Positive) continue;  // first gt keeps it
        t.kind = ObjectnessTarget::Kind::Positive;
        t.gt_index = static_cast<int>(g);
    }
    for (std::size_t p = 0; p < predictions.size(); ++p) {
        if (out[p].kind == ObjectnessTarget::Kind::Positive) continue;
        double best = 0;
        for (const Box& g : gts) best = std::max(best, iou(predictions[p], g));
        if (best > ignore_threshold) out[p].kind = ObjectnessTarget::Kind::Ignore;
    }
    return out;
}

template std::vector<DecodedBox> decode<float>(const Tensor&, const std::vector<Anchor>&,
                                               const GridSpec&);
template std::vector<DecodedBox> decode<double>(const TensorD&, const std::vector<Anchor>&,
                                                const GridSpec&);

}  // namespace iyolo
