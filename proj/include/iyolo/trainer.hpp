#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iyolo/loss.hpp"
#include "iyolo/mining.hpp"
#include "iyolo/network.hpp"

namespace iyolo {

struct TrainConfig {
    uint32_t seed = 1;
    int iterations = 300;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    bool ohem_enabled = true;
    MiningConfig mining;
    LsrConfig lsr{0.1, 3};
    LossWeights weights;
};

struct LossRecord {
    int iteration = 0;
    double total = 0, coord = 0, obj = 0, noobj = 0, class_term = 0;
};

struct LossHistory {
    std::vector<LossRecord> records;

    // Mean of the last `window` totals ending at index i (fewer at the start).
    double smoothed(std::size_t i, int window = 20) const;
    void write_csv(const std::string& path) const;  // iter,total,coord,obj,noobj,class
};

struct TrainSample {
    Tensor image;  // 3 x 64 x 64, values in [0,1]
    std::vector<GroundTruth> gts;
};

// Synthetic scenes: 1-3 filled axis-aligned rectangles, one fixed color per
// class, over uniform background noise of amplitude 0.05. Boxes stay inside
// the image, have area >= 1% of it, and pairwise IoU < 0.3. Deterministic
// per seed.
std::vector<TrainSample> synth_dataset(uint32_t seed, int n_images);

// v <- momentum * v - lr * g; theta <- theta + v. velocity must come from
// zero_grads(net) on the first call.
template <typename T>
void sgd_step(NetworkT<T>& net, const ParamGradsT<T>& grads, double lr, double momentum,
              ParamGradsT<T>& velocity);

// Called once per iteration with each image's parameter-gradient norm before
// OHEM masking zeroes the unselected ones.
using TrainObserver =
    std::function<void(int iteration, const std::vector<double>& image_grad_norms,
                       const std::vector<std::size_t>& selected)>;

// Mini-batch SGD over the dataset in index order ((iter * batch + j) mod n).
// Recorded losses are the plain batch means; OHEM masks gradients only.
// Throws DivergenceError if the total loss leaves (0, 1e6) or goes non-finite.
std::pair<Network, LossHistory> train(const TrainConfig& cfg,
                                      const std::vector<TrainSample>& dataset,
                                      const TrainObserver& observer = nullptr);

// Loss function abstraction for gradient checking: value and head-gradient
// of some scalar loss of the network output.
struct LossFn {
    std::function<double(const TensorD&)> value;
    std::function<TensorD(const TensorD&)> grad;
};

struct GradCheckResult {
    double max_relative_error = 0;
    std::string worst_block;
    std::size_t worst_index = 0;
    int params_checked = 0;
    int skipped_kinks = 0;  // sample points where the loss is not smooth
};

// Central finite differences (h = 1e-3) against the analytic gradient on a
// random ~5% sample of parameters (at least 8 per block). Sample points whose
// full-step and half-step estimates disagree sit on an activation kink or an
// argmax flip, where central differences say nothing about the true
// derivative; they are skipped and counted. corrupt_sign flips the analytic
// gradient to prove the check can fail.
GradCheckResult grad_check(NetworkD& net, const TensorD& input, const LossFn& loss,
                           uint32_t seed, double sample_fraction = 0.05, double h = 1e-3,
                           bool corrupt_sign = false);

// Probe networks small enough for finite differences.
NetworkSpec probe_linear_spec();     // single 1x1 linear conv
NetworkSpec probe_composite_spec(); // conv+bn+leaky, maxpool, reorg, route, head

}  // namespace iyolo
