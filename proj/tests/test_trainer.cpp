#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "iyolo/errors.hpp"
#include "iyolo/trainer.hpp"

using namespace iyolo;

namespace {

bool params_equal(const Network& a, const Network& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        const ConvParams& p = a.params[i];
        const ConvParams& q = b.params[i];
        if (p.weights != q.weights || p.bias != q.bias || p.gamma != q.gamma ||
            p.beta != q.beta) {
            return false;
        }
    }
    return true;
}

template <typename T>
void fill_grads(ParamGradsT<T>& g, T value) {
    for (ConvGradsT<T>& c : g.conv) {
        for (T& v : c.weights) v = value;
        for (T& v : c.bias) v = value;
        for (T& v : c.gamma) v = value;
        for (T& v : c.beta) v = value;
    }
}

}  // namespace

TEST_CASE("sgd_step: plain gradient step and momentum carry-over") {
    NetworkD net = build<double>(probe_linear_spec(), 4);
    const NetworkD before = net;
    ParamGradsT<double> grads = zero_grads(net);
    ParamGradsT<double> velocity = zero_grads(net);
    fill_grads(grads, 1.0);

    // momentum 0, lr 1: every parameter moves down by exactly 1
    sgd_step(net, grads, 1.0, 0.0, velocity);
    for (std::size_t i = 0; i < net.params[0].weights.size(); ++i) {
        CHECK(net.params[0].weights[i] == before.params[0].weights[i] - 1.0);
    }
    CHECK(net.params[0].bias[0] == before.params[0].bias[0] - 1.0);

    // zero gradient, momentum 0.5: velocity decays, parameters keep drifting
    fill_grads(grads, 0.0);
    sgd_step(net, grads, 1.0, 0.5, velocity);
    CHECK(net.params[0].weights[0] == doctest::Approx(before.params[0].weights[0] - 1.5));
    sgd_step(net, grads, 1.0, 0.5, velocity);
    CHECK(net.params[0].weights[0] == doctest::Approx(before.params[0].weights[0] - 1.75));
}

TEST_CASE("sgd_step: zero learning rate is a fixed point") {
    NetworkD net = build<double>(probe_linear_spec(), 9);
    const std::vector<double> saved = net.params[0].weights;
    ParamGradsT<double> grads = zero_grads(net);
    ParamGradsT<double> velocity = zero_grads(net);
    fill_grads(grads, 3.7);
    for (int i = 0; i < 5; ++i) sgd_step(net, grads, 0.0, 0.9, velocity);
    CHECK(net.params[0].weights == saved);
}

TEST_CASE("sgd_step rejects mismatched gradient shapes") {
    NetworkD net = build<double>(probe_linear_spec(), 2);
    ParamGradsT<double> grads = zero_grads(net);
    ParamGradsT<double> velocity = zero_grads(net);
    grads.conv.pop_back();
    CHECK_THROWS_AS(sgd_step(net, grads, 0.1, 0.9, velocity), ShapeError);

    ParamGradsT<double> bad = zero_grads(net);
    bad.conv[0].weights.pop_back();
    CHECK_THROWS_AS(sgd_step(net, bad, 0.1, 0.9, velocity), ShapeError);
}

TEST_CASE("synth_dataset: deterministic, boxes valid and well separated") {
    const std::vector<TrainSample> a = synth_dataset(42, 20);
    const std::vector<TrainSample> b = synth_dataset(42, 20);
    REQUIRE(a.size() == 20);
    REQUIRE(b.size() == 20);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].gts.size() == b[i].gts.size());
        CHECK(std::memcmp(a[i].image.data.data(), b[i].image.data.data(),
                          a[i].image.data.size() * sizeof(float)) == 0);
    }

    for (const TrainSample& s : a) {
        CHECK(s.image.channels == 3);
        CHECK(s.image.height == 64);
        CHECK(s.image.width == 64);
        REQUIRE(s.gts.size() >= 1);
        CHECK(s.gts.size() <= 3);
        for (float v : s.image.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (const GroundTruth& gt : s.gts) {
            CHECK(gt.class_id >= 0);
            CHECK(gt.class_id <= 2);
            CHECK(gt.cx - gt.w / 2 >= -1e-12);
            CHECK(gt.cx + gt.w / 2 <= 1 + 1e-12);
            CHECK(gt.cy - gt.h / 2 >= -1e-12);
            CHECK(gt.cy + gt.h / 2 <= 1 + 1e-12);
            CHECK(gt.w * gt.h >= 0.01);
        }
        for (std::size_t i = 0; i < s.gts.size(); ++i) {
            for (std::size_t j = i + 1; j < s.gts.size(); ++j) {
                CHECK(iou(s.gts[i].to_box(), s.gts[j].to_box()) < 0.3);
            }
        }
        // The most recently painted rectangle is intact; probe its center.
        const GroundTruth& last = s.gts.back();
        const int px = static_cast<int>(last.cx * 64);
        const int py = static_cast<int>(last.cy * 64);
        const float r = s.image.at(0, py, px);
        const float g = s.image.at(1, py, px);
        const float bch = s.image.at(2, py, px);
        const float expected[3][3] = {
            {0.9f, 0.15f, 0.1f}, {0.1f, 0.85f, 0.15f}, {0.15f, 0.1f, 0.9f}};
        CHECK(r == expected[last.class_id][0]);
        CHECK(g == expected[last.class_id][1]);
        CHECK(bch == expected[last.class_id][2]);
    }

    CHECK_THROWS_AS(synth_dataset(1, 0), ValidationError);
}

TEST_CASE("synth_dataset: classes stay roughly balanced") {
    const std::vector<TrainSample> data = synth_dataset(7, 300);
    int counts[3] = {0, 0, 0};
    int total = 0;
    for (const TrainSample& s : data) {
        for (const GroundTruth& gt : s.gts) {
            ++counts[gt.class_id];
            ++total;
        }
    }
    for (int c = 0; c < 3; ++c) {
        const double frac = static_cast<double>(counts[c]) / total;
        CHECK(frac >= 0.25);
        CHECK(frac <= 0.42);
    }
}

TEST_CASE("train: deterministic across runs") {
    TrainConfig cfg;
    cfg.seed = 11;
    cfg.iterations = 6;
    cfg.batch_size = 4;
    const std::vector<TrainSample> data = synth_dataset(5, 4);
    auto [net1, hist1] = train(cfg, data);
    auto [net2, hist2] = train(cfg, data);
    CHECK(params_equal(net1, net2));
    REQUIRE(hist1.records.size() == 6);
    REQUIRE(hist2.records.size() == 6);
    for (std::size_t i = 0; i < hist1.records.size(); ++i) {
        CHECK(hist1.records[i].iteration == static_cast<int>(i));
        CHECK(hist1.records[i].total == hist2.records[i].total);
        CHECK(std::isfinite(hist1.records[i].total));
        CHECK(hist1.records[i].total > 0);
    }
}

TEST_CASE("train: zero learning rate repeats the same batch loss") {
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.iterations = 4;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.0;
    const std::vector<TrainSample> data = synth_dataset(8, 4);
    auto [net, hist] = train(cfg, data);
    REQUIRE(hist.records.size() == 4);
    for (std::size_t i = 1; i < hist.records.size(); ++i) {
        CHECK(hist.records[i].total == hist.records[0].total);
    }
    CHECK(params_equal(net, build<float>(tiny_spec(3), cfg.seed)));
}

TEST_CASE("train: observer sees per-image norms and the hard subset") {
    TrainConfig cfg;
    cfg.seed = 21;
    cfg.iterations = 3;
    cfg.batch_size = 10;
    const std::vector<TrainSample> data = synth_dataset(17, 10);
    int calls = 0;
    train(cfg, data, [&](int iter, const std::vector<double>& norms,
                         const std::vector<std::size_t>& selected) {
        CHECK(iter == calls);
        ++calls;
        CHECK(norms.size() == 10);
        for (double n : norms) {
            CHECK(std::isfinite(n));
            CHECK(n >= 0);
        }
        CHECK(selected.size() == 7);  // floor(0.7 * 10)
        for (std::size_t idx : selected) CHECK(idx < 10);
    });
    CHECK(calls == 3);

    cfg.ohem_enabled = false;
    cfg.iterations = 1;
    train(cfg, data, [&](int, const std::vector<double>&,
                         const std::vector<std::size_t>& selected) {
        CHECK(selected.size() == 10);
    });
}

TEST_CASE("train: rejects bad configs and diverges loudly") {
    TrainConfig cfg;
    cfg.iterations = 2;
    CHECK_THROWS_AS(train(cfg, {}), ValidationError);

    const std::vector<TrainSample> data = synth_dataset(1, 2);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(cfg, data), ValidationError);
    cfg.batch_size = 2;
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(train(cfg, data), ValidationError);
    cfg.momentum = 0.9;
    cfg.learning_rate = -1e-3;
    CHECK_THROWS_AS(train(cfg, data), ValidationError);

    cfg.learning_rate = 1e4;
    cfg.iterations = 200;
    CHECK_THROWS_AS(train(cfg, data), DivergenceError);
}

TEST_CASE("LossHistory::smoothed averages a trailing window") {
    LossHistory h;
    for (int i = 1; i <= 10; ++i) {
        LossRecord r;
        r.iteration = i - 1;
        r.total = i;
        h.records.push_back(r);
    }
    CHECK(h.smoothed(0, 4) == doctest::Approx(1.0));
    CHECK(h.smoothed(2, 4) == doctest::Approx(2.0));
    CHECK(h.smoothed(9, 4) == doctest::Approx(8.5));
    CHECK(h.smoothed(9, 20) == doctest::Approx(5.5));
    CHECK_THROWS_AS(h.smoothed(10, 4), ValidationError);
}

TEST_CASE("LossHistory::write_csv emits one labeled row per iteration") {
    LossHistory h;
    LossRecord r;
    r.iteration = 0;
    r.total = 1.5;
    r.coord = 0.25;
    h.records.push_back(r);
    r.iteration = 1;
    r.total = 0.75;
    h.records.push_back(r);

    const std::string path = testutil::temp_path("history.csv");
    h.write_csv(path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header, row0, row1;
    std::getline(in, header);
    std::getline(in, row0);
    std::getline(in, row1);
    CHECK(header == "iter,total,coord,obj,noobj,class");
    CHECK(row0.substr(0, 2) == "0,");
    CHECK(row0.find("1.5,0.25,") != std::string::npos);
    CHECK(row1.substr(0, 2) == "1,");

    CHECK_THROWS_AS(h.write_csv("/nonexistent-dir/h.csv"), IoError);
}

TEST_CASE("grad_check: linear probe matches to rounding error") {
    NetworkD net = build<double>(probe_linear_spec(), 31);
    Rng rng(600);
    const TensorD input = testutil::random_tensor<double>(2, 4, 4, rng, -1.0, 1.0);
    LossFn loss;
    loss.value = [](const TensorD& head) {
        double acc = 0;
        for (double v : head.data) acc += v * v;
        return acc;
    };
    loss.grad = [](const TensorD& head) {
        TensorD g(head.channels, head.height, head.width);
        for (std::size_t i = 0; i < head.data.size(); ++i) g.data[i] = 2 * head.data[i];
        return g;
    };
    const GradCheckResult r = grad_check(net, input, loss, 77);
    CHECK(r.params_checked >= 10);
    CHECK(r.skipped_kinks == 0);
    CHECK(r.max_relative_error <= 1e-8);
}

TEST_CASE("grad_check: composite probe under the detection loss") {
    const std::vector<GroundTruth> gts = {{0, 0.3, 0.35, 0.35, 0.4}, {1, 0.7, 0.65, 0.3, 0.35}};
    const LsrConfig lsr{0.1, 2};
    const LossWeights weights;

    for (uint32_t seed = 1; seed <= 3; ++seed) {
        CAPTURE(seed);
        NetworkD net = build<double>(probe_composite_spec(), seed);
        Rng rng(seed ^ 0x7f4a7c15u);
        const TensorD input = testutil::random_tensor<double>(2, 8, 8, rng, 0.0, 1.0);
        LossFn loss;
        loss.value = [&](const TensorD& head) {
            return detection_loss(head, net.spec.anchors, 2, gts, lsr, weights).total;
        };
        loss.grad = [&](const TensorD& head) {
            TensorD g;
            detection_loss_grad(head, net.spec.anchors, 2, gts, lsr, weights, g);
            return g;
        };
        const GradCheckResult ok = grad_check(net, input, loss, seed * 101);
        CHECK(ok.params_checked > 50);
        CHECK(ok.max_relative_error <= 1e-3);

        const GradCheckResult bad = grad_check(net, input, loss, seed * 101, 0.05, 1e-3, true);
        CHECK(bad.max_relative_error > 0.5);
    }
}

TEST_CASE("probe specs have the advertised shapes") {
    const NetworkSpec lin = probe_linear_spec();
    REQUIRE(lin.layers.size() == 2);
    CHECK(lin.layers[0].kind == LayerKind::Conv);
    CHECK(lin.layers[0].activation == Activation::Linear);
    CHECK_FALSE(lin.layers[0].batch_norm);
    CHECK(lin.output_shapes.back().channels == 6);

    const NetworkSpec comp = probe_composite_spec();
    REQUIRE(comp.layers.size() == 10);
    CHECK(comp.output_shapes.back().channels == 14);
    CHECK(comp.output_shapes.back().height == 2);
    CHECK(comp.grid_cells() == 2);
}
