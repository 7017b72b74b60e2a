#include "iyolo/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iyolo/errors.hpp"

namespace iyolo {

namespace {

constexpr double kProbFloor = 1e-12;

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

// Binary cross entropy of a logit z against target t in [0,1], in the
// overflow-free form max(z,0) - z*t + log(1 + exp(-|z|)).
double bce(double z, double t) {
    return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
}

double bce_grad(double z, double t) {
    // d bce / d z = sigmoid(z) - t
    double s;
    if (z >= 0) {
        s = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        s = e / (1.0 + e);
    }
    return s - t;
}

void check_lsr(const LsrConfig& cfg) {
    if (cfg.num_classes < 1) throw ValidationError("class count must be >= 1");
    if (!(cfg.epsilon >= 0.0) || !(cfg.epsilon <= 1.0)) {
        throw ValidationError("epsilon must lie in [0,1], got " + std::to_string(cfg.epsilon));
    }
}

void check_y(int num_classes, int y) {
    if (y < 1 || y > num_classes) {
        throw ValidationError("class label " + std::to_string(y) + " outside 1.." +
                              std::to_string(num_classes));
    }
}

}  // namespace

ClassDistribution hard_target(int num_classes, int true_class) {
    check_y(num_classes, true_class);
    ClassDistribution q(num_classes, 0.0);
    q[true_class - 1] = 1.0;
    return q;
}

ClassDistribution lsr_target(const LsrConfig& cfg, int true_class) {
    check_lsr(cfg);
    check_y(cfg.num_classes, true_class);
    const double uniform = cfg.epsilon / cfg.num_classes;
    ClassDistribution q(cfg.num_classes, uniform);
    q[true_class - 1] = 1.0 - cfg.epsilon + uniform;
    return q;
}

double cross_entropy(const ClassDistribution& p, const ClassDistribution& q) {
    if (p.size() != q.size()) {
        throw ValidationError("distribution sizes differ: " + std::to_string(p.size()) +
                              " vs " + std::to_string(q.size()));
    }
    double l = 0;
    for (std::size_t k = 0; k < p.size(); ++k) l -= q[k] * safe_log(p[k]);
    return l;
}

double lsr_loss(const ClassDistribution& p, const LsrConfig& cfg, int true_class) {
    check_lsr(cfg);
    check_y(cfg.num_classes, true_class);
    if (static_cast<int>(p.size()) != cfg.num_classes) {
        throw ValidationError("distribution has " + std::to_string(p.size()) +
                              " entries, config wants " + std::to_string(cfg.num_classes));
    }
    double sum_log = 0;
    for (double v : p) sum_log += safe_log(v);
    return -(1.0 - cfg.epsilon) * safe_log(p[true_class - 1]) -
           cfg.epsilon / cfg.num_classes * sum_log;
}

namespace {

// Shape-only overlap of a gt (w, h in grid units) against an anchor, both
// centered at the origin.
double shape_iou(double w, double h, const Anchor& a) {
    const double inter = std::min(w, static_cast<double>(a.w)) *
                         std::min(h, static_cast<double>(a.h));
    const double uni = w * h + static_cast<double>(a.w) * static_cast<double>(a.h) - inter;
    return uni <= 0 ? 0 : inter / uni;
}

struct Assignment {
    int gt = -1;       // ground truth owning this slot
    EncodedBox target;
};

// One entry per (anchor, cell) slot, anchor-major like decode()'s output.
struct SlotPlan {
    int grid = 0;
    int num_classes = 0;
    std::vector<Assignment> assignments;          // slot -> owner
    std::vector<ObjectnessTarget> object_kinds;   // slot -> pos/ignore/neg
};

template <typename T>
SlotPlan plan_slots(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                    int num_classes, const std::vector<GroundTruth>& gts) {
    const int a_count = static_cast<int>(anchors.size());
    if (a_count == 0) throw ValidationError("need at least one anchor");
    if (head.height != head.width) {
        throw ShapeError("detection head must be square, got " + head.shape_str());
    }
    const int s = head.height;
    if (head.channels != a_count * (5 + num_classes)) {
        throw ShapeError("detection head has " + std::to_string(head.channels) +
                         " channels, want " + std::to_string(a_count * (5 + num_classes)));
    }

    for (const GroundTruth& gt : gts) {
        if (!(gt.cx >= 0) || gt.cx >= 1 || !(gt.cy >= 0) || gt.cy >= 1) {
            throw ValidationError("ground truth center (" + std::to_string(gt.cx) + "," +
                                  std::to_string(gt.cy) + ") outside [0,1)");
        }
        if (!(gt.w > 0) || !(gt.h > 0)) {
            throw ValidationError("ground truth size must be positive");
        }
        if (gt.class_id < 0 || gt.class_id >= num_classes) {
            throw ValidationError("ground truth class " + std::to_string(gt.class_id) +
                                  " outside 0.." + std::to_string(num_classes - 1));
        }
    }

    SlotPlan plan;
    plan.grid = s;
    plan.num_classes = num_classes;
    plan.assignments.assign(static_cast<std::size_t>(a_count) * s * s, Assignment{});

    // Responsible slot per gt: center cell plus the best shape-matching
    // anchor (lower index wins ties); the first gt to claim a slot keeps it.
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const GroundTruth& gt = gts[g];
        const int cx = static_cast<int>(gt.cx * s);
        const int cy = static_cast<int>(gt.cy * s);
        int best_a = 0;
        double best = -1;
        for (int a = 0; a < a_count; ++a) {
            const double v = shape_iou(gt.w * s, gt.h * s, anchors[a]);
            if (v > best) {
                best = v;
                best_a = a;
            }
        }
        const std::size_t slot =
            (static_cast<std::size_t>(best_a) * s + cy) * s + cx;
        if (plan.assignments[slot].gt >= 0) continue;
        plan.assignments[slot].gt = static_cast<int>(g);
        plan.assignments[slot].target =
            encode(gt.cx * s, gt.cy * s, gt.w * s, gt.h * s, cx, cy, anchors[best_a]);
    }

    // Ignore/negative split from decoded geometry.
    const std::vector<DecodedBox> decoded = decode(head, anchors, GridSpec{s});
    std::vector<Box> pred_boxes(decoded.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) pred_boxes[i] = decoded[i].corners_grid();
    std::vector<Box> gt_boxes(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const Box b = gts[g].to_box();
        gt_boxes[g] = Box{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    }
    plan.object_kinds = objectness_targets(pred_boxes, gt_boxes, 0.5);
    return plan;
}

template <typename T>
LossBreakdown run_detection_loss(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                                 int num_classes, const std::vector<GroundTruth>& gts,
                                 const LsrConfig& lsr, const LossWeights& weights,
                                 TensorT<T>* grad_out) {
    check_lsr(lsr);
    if (lsr.num_classes != num_classes) {
        throw ValidationError("label-smoothing class count differs from the head's");
    }
    const SlotPlan plan = plan_slots(head, anchors, num_classes, gts);
    const int s = plan.grid;
    const int a_count = static_cast<int>(anchors.size());

    if (grad_out) *grad_out = TensorT<T>(head.channels, s, s);

    LossBreakdown out;
    for (int a = 0; a < a_count; ++a) {
        const int base = a * (5 + num_classes);
        for (int cy = 0; cy < s; ++cy) {
            for (int cx = 0; cx < s; ++cx) {
                const std::size_t slot = (static_cast<std::size_t>(a) * s + cy) * s + cx;
                const Assignment& asg = plan.assignments[slot];
                const double z_obj = static_cast<double>(head.at(base + 4, cy, cx));
                if (asg.gt >= 0) {
                    ++out.positives;
                    const double t[4] = {asg.target.tx, asg.target.ty, asg.target.tw,
                                         asg.target.th};
                    for (int f = 0; f < 4; ++f) {
                        const double z = static_cast<double>(head.at(base + f, cy, cx));
                        out.coord += (z - t[f]) * (z - t[f]);
                        if (grad_out) {
                            grad_out->at(base + f, cy, cx) =
                                static_cast<T>(2.0 * (z - t[f]) * weights.coord);
                        }
                    }
                    out.obj += bce(z_obj, 1.0);
                    if (grad_out) {
                        grad_out->at(base + 4, cy, cx) =
                            static_cast<T>(bce_grad(z_obj, 1.0) * weights.obj);
                    }
                    const ClassDistribution q =
                        lsr_target(lsr, gts[asg.gt].class_id + 1);
                    for (int k = 0; k < num_classes; ++k) {
                        const double z = static_cast<double>(head.at(base + 5 + k, cy, cx));
                        out.class_term += bce(z, q[k]);
                        if (grad_out) {
                            grad_out->at(base + 5 + k, cy, cx) =
                                static_cast<T>(bce_grad(z, q[k]) * weights.class_w);
                        }
                    }
                } else if (plan.object_kinds[slot].kind == ObjectnessTarget::Kind::Negative) {
                    ++out.negatives;
                    out.noobj += bce(z_obj, 0.0);
                    if (grad_out) {
                        grad_out->at(base + 4, cy, cx) =
                            static_cast<T>(bce_grad(z_obj, 0.0) * weights.noobj);
                    }
                } else {
                    ++out.ignored;
                }
            }
        }
    }
    out.total = weights.coord * out.coord + weights.obj * out.obj + weights.noobj * out.noobj +
                weights.class_w * out.class_term;
    return out;
}

}  // namespace

template <typename T>
LossBreakdown detection_loss(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                             int num_classes, const std::vector<GroundTruth>& gts,
                             const LsrConfig& lsr, const LossWeights& weights) {
    return run_detection_loss(head, anchors, num_classes, gts, lsr, weights,
                              static_cast<TensorT<T>*>(nullptr));
}

template <typename T>
LossBreakdown detection_loss_grad(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                                  int num_classes, const std::vector<GroundTruth>& gts,
                                  const LsrConfig& lsr, const LossWeights& weights,
                                  TensorT<T>& grad_out) {
    return run_detection_loss(head, anchors, num_classes, gts, lsr, weights, &grad_out);
}

template LossBreakdown detection_loss<float>(const Tensor&, const std::vector<Anchor>&, int,
                                             const std::vector<GroundTruth>&, const LsrConfig&,
                                             const LossWeights&);
template LossBreakdown detection_loss<double>(const TensorD&, const std::vector<Anchor>&, int,
                                              const std::vector<GroundTruth>&, const LsrConfig&,
                                              const LossWeights&);
template LossBreakdown detection_loss_grad<float>(const Tensor&, const std::vector<Anchor>&,
                                                  int, const std::vector<GroundTruth>&,
                                                  const LsrConfig&, const LossWeights&,
                                                  Tensor&);
template LossBreakdown detection_loss_grad<double>(const TensorD&, const std::vector<Anchor>&,
                                                   int, const std::vector<GroundTruth>&,
                                                   const LsrConfig&, const LossWeights&,
                                                   TensorD&);

}  // namespace iyolo
