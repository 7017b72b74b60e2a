#pragma once

#include <vector>

#include "iyolo/boxes.hpp"
#include "iyolo/tensor.hpp"

namespace iyolo {

// Discrete distribution over classes; entries sum to 1 for valid targets.
using ClassDistribution = std::vector<double>;

// Label-smoothing regularization: the one-hot target is mixed with the
// uniform distribution, epsilon/K off the true class and 1-epsilon+epsilon/K
// on it.
struct LsrConfig {
    double epsilon = 0.1;
    int num_classes = 0;
};

ClassDistribution hard_target(int num_classes, int true_class);
ClassDistribution lsr_target(const LsrConfig& cfg, int true_class);

// -sum_k q(k) log p(k); p entries are clamped to >= 1e-12.
double cross_entropy(const ClassDistribution& p, const ClassDistribution& q);

// Closed form -(1-eps) log p(y) - (eps/K) sum_k log p(k); equals
// cross_entropy(p, lsr_target) exactly.
double lsr_loss(const ClassDistribution& p, const LsrConfig& cfg, int true_class);

struct LossWeights {
    double obj = 5;
    double noobj = 1;
    double class_w = 1;
    double coord = 1;
};

struct LossBreakdown {
    double coord = 0;
    double obj = 0;
    double noobj = 0;
    double class_term = 0;
    double total = 0;
    int positives = 0;
    int ignored = 0;
    int negatives = 0;
};

// Full detection loss over one head tensor:
//  - each ground truth is assigned to its center cell and the anchor whose
//    shape matches it best (shape-only IoU, lower index wins ties; when two
//    gts collide on a slot the first keeps it);
//  - coordinate loss is sum of squared errors in t-space against encode();
//  - objectness and class terms are per-logit binary cross entropies, class
//    targets label-smoothed;
//  - non-positive slots whose decoded box overlaps some gt with IoU > 0.5
//    are ignored, the rest contribute no-object loss.
// Ground truths with centers outside [0,1) or non-positive sizes throw
// ValidationError.
template <typename T>
LossBreakdown detection_loss(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                             int num_classes, const std::vector<GroundTruth>& gts,
                             const LsrConfig& lsr, const LossWeights& weights);

// d total / d head, same shape as head. The returned breakdown matches
// detection_loss on the same inputs.
template <typename T>
LossBreakdown detection_loss_grad(const TensorT<T>& head, const std::vector<Anchor>& anchors,
                                  int num_classes, const std::vector<GroundTruth>& gts,
                                  const LsrConfig& lsr, const LossWeights& weights,
                                  TensorT<T>& grad_out);

}  // namespace iyolo
