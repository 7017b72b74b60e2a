#include "iyolo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>

#include "iyolo/errors.hpp"

namespace iyolo {

double LossHistory::smoothed(std::size_t i, int window) const {
    if (i >= records.size()) throw ValidationError("smoothed index out of range");
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
    double acc = 0;
    for (std::size_t j = lo; j <= i; ++j) acc += records[j].total;
    return acc / static_cast<double>(i - lo + 1);
}

void LossHistory::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "iter,total,coord,obj,noobj,class\n";
    char line[256];
    for (const LossRecord& r : records) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                      r.total, r.coord, r.obj, r.noobj, r.class_term);
        out << line;
    }
    if (!out) throw IoError("failed writing " + path);
}

std::vector<TrainSample> synth_dataset(uint32_t seed, int n_images) {
    if (n_images < 1) throw ValidationError("dataset needs at least one image");
    Rng rng(seed);
    const float colors[3][3] = {
        {0.9f, 0.15f, 0.1f}, {0.1f, 0.85f, 0.15f}, {0.15f, 0.1f, 0.9f}};
    std::vector<TrainSample> out;
    out.reserve(n_images);
    for (int n = 0; n < n_images; ++n) {
        TrainSample s;
        s.image = Tensor(3, 64, 64);
        for (float& v : s.image.data) v = rng.uniform_f(0.35f, 0.45f);

        const int want = rng.uniform_int(1, 3);
        for (int r = 0; r < want; ++r) {
            GroundTruth gt;
            bool placed = false;
            for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
                gt.class_id = rng.uniform_int(0, 2);
                gt.w = rng.uniform(0.15, 0.5);
                gt.h = rng.uniform(0.15, 0.5);
                gt.cx = rng.uniform(gt.w / 2, 1.0 - gt.w / 2);
                gt.cy = rng.uniform(gt.h / 2, 1.0 - gt.h / 2);
                placed = true;
                for (const GroundTruth& other : s.gts) {
                    if (iou(gt.to_box(), other.to_box()) >= 0.3) {
                        placed = false;
                        break;
                    }
                }
            }
            if (!placed) continue;
            const int x1 = std::max(0, static_cast<int>(std::lround((gt.cx - gt.w / 2) * 64)));
            const int x2 = std::min(64, static_cast<int>(std::lround((gt.cx + gt.w / 2) * 64)));
            const int y1 = std::max(0, static_cast<int>(std::lround((gt.cy - gt.h / 2) * 64)));
            const int y2 = std::min(64, static_cast<int>(std::lround((gt.cy + gt.h / 2) * 64)));
            for (int c = 0; c < 3; ++c) {
                for (int y = y1; y < y2; ++y) {
                    float* row = s.image.row(c, y);
                    for (int x = x1; x < x2; ++x) row[x] = colors[gt.class_id][c];
                }
            }
            s.gts.push_back(gt);
        }
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
void sgd_step(NetworkT<T>& net, const ParamGradsT<T>& grads, double lr, double momentum,
              ParamGradsT<T>& velocity) {
    if (grads.conv.size() != net.params.size() || velocity.conv.size() != net.params.size()) {
        throw ShapeError("gradient/velocity layer count does not match the network");
    }
    auto update = [&](std::vector<T>& p, const std::vector<T>& g, std::vector<T>& v) {
        if (p.size() != g.size() || p.size() != v.size()) {
            throw ShapeError("gradient size does not match parameters");
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = static_cast<T>(momentum * static_cast<double>(v[i]) -
                                  lr * static_cast<double>(g[i]));
            p[i] += v[i];
        }
    };
    for (std::size_t ci = 0; ci < net.params.size(); ++ci) {
        ConvParamsT<T>& p = net.params[ci];
        update(p.weights, grads.conv[ci].weights, velocity.conv[ci].weights);
        if (p.has_bn) {
            update(p.gamma, grads.conv[ci].gamma, velocity.conv[ci].gamma);
            update(p.beta, grads.conv[ci].beta, velocity.conv[ci].beta);
        } else {
            update(p.bias, grads.conv[ci].bias, velocity.conv[ci].bias);
        }
    }
}

namespace {

double grad_norm(const ParamGradsT<float>& g) {
    double acc = 0;
    for (const ConvGradsT<float>& c : g.conv) {
        for (float v : c.weights) acc += static_cast<double>(v) * v;
        for (float v : c.bias) acc += static_cast<double>(v) * v;
        for (float v : c.gamma) acc += static_cast<double>(v) * v;
        for (float v : c.beta) acc += static_cast<double>(v) * v;
    }
    return std::sqrt(acc);
}

}  // namespace

std::pair<Network, LossHistory> train(const TrainConfig& cfg,
                                      const std::vector<TrainSample>& dataset,
                                      const TrainObserver& observer) {
    if (dataset.empty()) throw ValidationError("training needs a non-empty dataset");
    if (cfg.batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (cfg.iterations < 0) throw ValidationError("iteration count must be >= 0");
    if (!(cfg.learning_rate >= 0)) throw ValidationError("learning rate must be >= 0");
    if (!(cfg.momentum >= 0) || cfg.momentum >= 1) {
        throw ValidationError("momentum must lie in [0,1)");
    }

    Network net = build<float>(tiny_spec(cfg.lsr.num_classes), cfg.seed);
    ParamGradsT<float> velocity = zero_grads(net);
    LossHistory history;
    history.records.reserve(cfg.iterations);

    const int b = cfg.batch_size;
    const std::size_t n = dataset.size();

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<ParamGradsT<float>> image_grads;
        image_grads.reserve(b);
        std::vector<double> image_losses(b, 0.0);
        LossRecord rec;
        rec.iteration = iter;

        for (int j = 0; j < b; ++j) {
            const TrainSample& sample =
                dataset[(static_cast<std::size_t>(iter) * b + j) % n];
            ForwardTraceT<float> trace = forward_trace(net, sample.image);
            Tensor grad_head;
            const LossBreakdown l =
                detection_loss_grad(trace.outputs.back(), net.spec.anchors,
                                    net.spec.num_classes, sample.gts, cfg.lsr, cfg.weights,
                                    grad_head);
            image_losses[j] = l.total;
            rec.total += l.total;
            rec.coord += l.coord;
            rec.obj += l.obj;
            rec.noobj += l.noobj;
            rec.class_term += l.class_term;
            image_grads.push_back(backward(net, sample.image, trace, grad_head));
        }
        const double inv_b = 1.0 / b;
        rec.total *= inv_b;
        rec.coord *= inv_b;
        rec.obj *= inv_b;
        rec.noobj *= inv_b;
        rec.class_term *= inv_b;

        if (!std::isfinite(rec.total) || rec.total > 1e6) {
            throw DivergenceError("training diverged at iteration " + std::to_string(iter) +
                                  ": batch loss " + std::to_string(rec.total));
        }

        std::vector<std::size_t> selected;
        if (cfg.ohem_enabled) {
            selected = ohem_select(image_losses, cfg.mining);
        } else {
            selected.resize(b);
            std::iota(selected.begin(), selected.end(), 0);
        }

        if (observer) {
            std::vector<double> norms(b, 0.0);
            for (int j = 0; j < b; ++j) norms[j] = grad_norm(image_grads[j]);
            observer(iter, norms, selected);
        }

        ParamGradsT<float> batch = zero_grads(net);
        for (std::size_t idx : selected) batch.accumulate(image_grads[idx]);
        batch.scale(static_cast<float>(inv_b));
        sgd_step(net, batch, cfg.learning_rate, cfg.momentum, velocity);

        history.records.push_back(rec);
    }
    return {std::move(net), std::move(history)};
}

NetworkSpec probe_linear_spec() {
    NetworkSpec spec;
    spec.input_channels = 2;
    spec.input_size = 4;
    spec.anchors = {{1.0f, 1.0f}};
    spec.num_classes = 1;
    LayerSpec head;
    head.index = 0;
    head.kind = LayerKind::Conv;
    head.filters = spec.detection_channels();  // 6
    head.kernel = 1;
    head.batch_norm = false;
    head.activation = Activation::Linear;
    LayerSpec det;
    det.index = 1;
    det.kind = LayerKind::Detection;
    spec.layers = {head, det};
    spec.propagate_shapes();
    return spec;
}

NetworkSpec probe_composite_spec() {
    NetworkSpec spec;
    spec.input_channels = 2;
    spec.input_size = 8;
    spec.anchors = {{0.8f, 1.2f}, {1.5f, 0.9f}};
    spec.num_classes = 2;

    auto conv = [](int index, int filters, int kernel) {
        LayerSpec l;
        l.index = index;
        l.kind = LayerKind::Conv;
        l.filters = filters;
        l.kernel = kernel;
        l.batch_norm = true;
        l.activation = Activation::Leaky;
        return l;
    };
    LayerSpec pool1;
    pool1.index = 1;
    pool1.kind = LayerKind::MaxPool;
    LayerSpec pool3;
    pool3.index = 3;
    pool3.kind = LayerKind::MaxPool;
    LayerSpec skip;
    skip.index = 5;
    skip.kind = LayerKind::Route;
    skip.route_sources = {2};
    LayerSpec rg;
    rg.index = 6;
    rg.kind = LayerKind::Reorg;
    rg.reorg_stride = 2;
    LayerSpec cat;
    cat.index = 7;
    cat.kind = LayerKind::Route;
    cat.route_sources = {6, 4};
    LayerSpec head = conv(8, spec.detection_channels(), 1);  // 14 filters
    head.batch_norm = false;
    head.activation = Activation::Linear;
    LayerSpec det;
    det.index = 9;
    det.kind = LayerKind::Detection;

    spec.layers = {conv(0, 4, 3), pool1, conv(2, 8, 3),  pool3, conv(4, 8, 3),
                   skip,          rg,    cat,            head,  det};
    spec.propagate_shapes();
    return spec;
}

GradCheckResult grad_check(NetworkD& net, const TensorD& input, const LossFn& loss,
                           uint32_t seed, double sample_fraction, double h,
                           bool corrupt_sign) {
    ForwardTraceT<double> trace = forward_trace(net, input);
    const TensorD head = trace.outputs.back();
    const TensorD grad_head = loss.grad(head);
    ParamGradsT<double> analytic = backward(net, input, trace, grad_head);

    std::vector<ParamBlockT<double>> blocks = parameter_blocks(net);
    std::vector<const std::vector<double>*> grads = gradient_blocks(analytic);
    if (blocks.size() != grads.size()) throw ShapeError("parameter/gradient blocks differ");

    Rng rng(seed);
    GradCheckResult result;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        std::vector<double>& values = *blocks[bi].values;
        const std::vector<double>& g = *grads[bi];
        if (values.empty()) continue;
        const std::size_t want = std::max<std::size_t>(
            std::min<std::size_t>(values.size(), 8),
            static_cast<std::size_t>(sample_fraction * static_cast<double>(values.size())));
        for (std::size_t s = 0; s < want; ++s) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(values.size()) - 1));
            const double saved = values[idx];
            auto eval_at = [&](double v) {
                values[idx] = v;
                return loss.value(forward(net, input));
            };
            const double full = (eval_at(saved + h) - eval_at(saved - h)) / (2 * h);
            const double half = (eval_at(saved + h / 2) - eval_at(saved - h / 2)) / h;
            values[idx] = saved;

            // A kink inside the probe window makes the two estimates split.
            if (std::fabs(full - half) >
                5e-4 * std::max({std::fabs(full), std::fabs(half), 1e-2})) {
                ++result.skipped_kinks;
                continue;
            }
            const double numeric = full;
            const double a = corrupt_sign ? -g[idx] : g[idx];
            const double rel =
                std::fabs(a - numeric) /
                std::max({std::fabs(a), std::fabs(numeric), 1e-2});
            ++result.params_checked;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_block = blocks[bi].name;
                result.worst_index = idx;
            }
        }
    }
    return result;
}

template void sgd_step<float>(Network&, const ParamGradsT<float>&, double, double,
                              ParamGradsT<float>&);
template void sgd_step<double>(NetworkD&, const ParamGradsT<double>&, double, double,
                               ParamGradsT<double>&);

}  // namespace iyolo
