#pragma once

#include <vector>

#include "iyolo/tensor.hpp"

namespace iyolo {

// Anchor prior (p_w, p_h) in grid-cell units.
struct Anchor {
    float w = 0;
    float h = 0;
};

// S x S detection grid; cell offsets c_x, c_y run over {0..S-1}.
struct GridSpec {
    int cells = 13;
};

// Axis-aligned box, normalized image coordinates, corners (x1,y1)-(x2,y2).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// Annotated object: class plus a normalized center/size box.
struct GroundTruth {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
    Box to_box() const { return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

// Per-anchor-per-cell raw network outputs.
struct RawBoxPrediction {
    double tx = 0, ty = 0, tw = 0, th = 0;
    double objectness_logit = 0;
    std::vector<double> class_logits;
};

// Image-space decode of a RawBoxPrediction. Center/size in grid units:
// bx = sigmoid(tx) + cx, bw = pw * exp(tw), etc. Class probabilities come
// from independent logistics and are not normalized.
struct DecodedBox {
    double bx = 0, by = 0, bw = 0, bh = 0;
    double objectness = 0;
    std::vector<double> class_probs;
    int class_id = 0;
    double confidence = 0;  // objectness * max class prob
    int cell_x = 0, cell_y = 0, anchor = 0;

    int cell_index(int grid_cells) const { return cell_y * grid_cells + cell_x; }

    // Corner box in grid units, unclamped.
    Box corners_grid() const {
        return Box{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
    }

    // Normalized corner box, clamped into [0,1].
    Box to_normalized(int grid_cells) const;
};

double iou(const Box& a, const Box& b);

// The detection tensor holds anchor-major blocks of (5 + num_classes)
// channels: [tx, ty, tw, th, objectness, class_0 .. class_{K-1}].
inline int detection_channel(int anchor, int field, int num_classes) {
    return anchor * (5 + num_classes) + field;
}

template <typename T>
std::vector<DecodedBox> decode(const TensorT<T>& raw, const std::vector<Anchor>& anchors,
                               const GridSpec& grid);

struct EncodedBox {
    double tx = 0, ty = 0, tw = 0, th = 0;
};

// Inverse of decode for one box given its responsible cell and anchor.
// Center/size in grid units; offsets clamped into [1e-6, 1-1e-6] before the
// logit so boundary centers stay finite. Centers outside the cell throw.
EncodedBox encode(double bx, double by, double bw, double bh, int cell_x, int cell_y,
                  const Anchor& anchor);

// Greedy per-class suppression; survivors sorted by confidence descending.
// Ties broken by lower cell index, then lower anchor index.
std::vector<DecodedBox> nms(std::vector<DecodedBox> dets, double iou_threshold = 0.45,
                            int grid_cells = 13);

struct ObjectnessTarget {
    enum class Kind { Positive, Ignore, Negative };
    Kind kind = Kind::Negative;
    int gt_index = -1;  // set for positives
};

// For each prediction: positive iff it is the best-IoU prediction for some
// ground truth; else ignored iff its best IoU against any gt exceeds 0.5;
// else negative.
std::vector<ObjectnessTarget> objectness_targets(const std::vector<Box>& predictions,
                                                 const std::vector<Box>& gts,
                                                 double ignore_threshold = 0.5);

}  // namespace iyolo
