#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "iyolo/annotations.hpp"
#include "iyolo/backend.hpp"
#include "iyolo/errors.hpp"
#include "iyolo/eval.hpp"
#include "iyolo/loss.hpp"
#include "iyolo/mining.hpp"
#include "iyolo/network.hpp"
#include "iyolo/ppm.hpp"
#include "iyolo/trainer.hpp"
#include "iyolo/weights_io.hpp"

namespace fs = std::filesystem;
using namespace iyolo;

namespace {

// Architecture is sniffed from the header: the full network carries 22
// trainable layers, the reduced one 12.
Network load_net(const std::string& weights_path) {
    const WeightsHeader h = peek_weights(weights_path);
    NetworkSpec spec;
    if (h.layer_count == 22) {
        spec = iyolo_spec(static_cast<int>(h.num_classes));
    } else if (h.layer_count == 12) {
        spec = tiny_spec(static_cast<int>(h.num_classes));
    } else {
        throw ValidationError("weight file declares " + std::to_string(h.layer_count) +
                              " trainable layers; expected 22 (full) or 12 (reduced)");
    }
    Network net = build<float>(spec, 0);
    load_weights(net, weights_path);
    return net;
}

std::vector<Detection> detect_on_image(const Network& net, const Tensor& image,
                                       double conf_thr, double nms_thr) {
    const Tensor input = resize_nearest(image, net.spec.input_size, net.spec.input_size);
    const Tensor head = forward(net, input);
    const GridSpec grid{net.spec.grid_cells()};
    std::vector<DecodedBox> boxes = decode(head, net.spec.anchors, grid);
    std::vector<DecodedBox> strong;
    for (const DecodedBox& b : boxes) {
        if (b.confidence >= conf_thr) strong.push_back(b);
    }
    std::vector<DecodedBox> kept = nms(std::move(strong), nms_thr, grid.cells);
    std::vector<Detection> dets;
    dets.reserve(kept.size());
    for (const DecodedBox& k : kept) {
        Detection d;
        d.class_id = k.class_id;
        d.box = k.to_normalized(grid.cells);
        d.confidence = k.confidence;
        dets.push_back(d);
    }
    return dets;
}

int worker_count(std::size_t jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("IYOLO_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

struct DetectArgs {
    std::string weights, image, out = "detections.txt", render;
    double conf = 0.25, nms = 0.45;
};

int cmd_detect(const DetectArgs& a) {
    const Network net = load_net(a.weights);
    const Tensor image = read_ppm(a.image);
    const std::vector<Detection> dets = detect_on_image(net, image, a.conf, a.nms);

    std::vector<Annotation> anns;
    anns.reserve(dets.size());
    for (const Detection& d : dets) anns.push_back(from_detection(d));
    write_annotations(anns, a.out);

    if (!a.render.empty()) {
        Tensor canvas = image;
        for (const Detection& d : dets) {
            float r, g, b;
            class_color(d.class_id, r, g, b);
            draw_box(canvas, d.box, r, g, b);
        }
        write_ppm(canvas, a.render);
    }
    std::printf("%zu detections -> %s\n", dets.size(), a.out.c_str());
    return 0;
}

struct EvalArgs {
    std::string weights, images, labels, out = ".";
    double conf = 0.25, nms = 0.45, iou = 0.5;
};

int cmd_eval(const EvalArgs& a) {
    const Network net = load_net(a.weights);

    std::vector<fs::path> image_paths;
    for (const fs::directory_entry& e : fs::directory_iterator(a.images)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") {
            image_paths.push_back(e.path());
        }
    }
    std::sort(image_paths.begin(), image_paths.end());
    if (image_paths.empty()) throw IoError("no .ppm images in " + a.images);

    struct Job {
        fs::path image, label;
    };
    std::vector<Job> jobs;
    int skipped = 0;
    for (const fs::path& p : image_paths) {
        fs::path label = fs::path(a.labels) / (p.stem().string() + ".txt");
        if (!fs::exists(label)) {
            std::fprintf(stderr, "warning: no annotation for %s, skipped\n",
                         p.filename().string().c_str());
            ++skipped;
            continue;
        }
        jobs.push_back({p, label});
    }

    std::vector<ImageEval> corpus(jobs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;
    auto run = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size() || failed.load()) return;
            try {
                const Tensor image = read_ppm(jobs[i].image.string());
                corpus[i].dets = detect_on_image(net, image, a.conf, a.nms);
                corpus[i].gts = to_ground_truths(read_annotations(jobs[i].label.string()));
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) {
                    first_error = jobs[i].image.string() + ": " + e.what();
                }
            }
        }
    };
    const int workers = worker_count(jobs.size());
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
    if (failed.load()) throw IoError(first_error);

    std::vector<MatchResult> matches;
    matches.reserve(corpus.size());
    for (const ImageEval& img : corpus) matches.push_back(match(img.dets, img.gts, a.iou));

    const MetricsReport report = metrics(matches);
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    write_metrics_csv(report, (out_dir / "metrics.csv").string());
    write_pr_csv(pr_curve(corpus, a.iou), (out_dir / "pr.csv").string());

    std::printf("images %zu (skipped %d)\n", jobs.size(), skipped);
    std::printf("detection_rate %.6f\nerror_detection_rate %.6f\n", report.detection_rate,
                report.error_detection_rate);
    std::printf("classification_rate %.6f\nerror_classification_rate %.6f\n",
                report.classification_rate, report.error_classification_rate);
    return 0;
}

struct TrainArgs {
    std::string out = "toy.iyw";
    uint32_t seed = 1;
    int iters = 300;
    double epsilon = 0.1;
    bool compare_ohem = false;
};

std::string loss_csv_path(const std::string& weights_out, const char* suffix) {
    fs::path p(weights_out);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

int cmd_train_toy(const TrainArgs& a) {
    if (a.iters < 1) throw ValidationError("need at least one training iteration");
    TrainConfig cfg;
    cfg.seed = a.seed;
    cfg.iterations = a.iters;
    cfg.lsr.epsilon = a.epsilon;
    const std::vector<TrainSample> dataset = synth_dataset(a.seed, 8);

    auto [net, hist] = train(cfg, dataset);
    save_weights(net, a.out);
    hist.write_csv(loss_csv_path(a.out, "_loss.csv"));
    const std::size_t last = hist.records.size() - 1;
    std::printf("trained %d iterations, loss %.4f -> %.4f (smoothed %.4f -> %.4f)\n",
                a.iters, hist.records.front().total, hist.records.back().total,
                hist.smoothed(std::min<std::size_t>(19, last)), hist.smoothed(last));

    if (a.compare_ohem) {
        TrainConfig plain = cfg;
        plain.ohem_enabled = false;
        auto [net2, hist2] = train(plain, dataset);
        (void)net2;
        hist2.write_csv(loss_csv_path(a.out, "_loss_no_ohem.csv"));
        std::printf("comparison run (no hard-sample mining): final smoothed %.4f\n",
                    hist2.smoothed(hist2.records.size() - 1));
    }
    return 0;
}

int cmd_gradcheck(uint32_t seed) {
    // Quadratic probe: a linear network under sum-of-squares loss, where
    // central differences are exact up to rounding.
    NetworkD linear = build<double>(probe_linear_spec(), seed);
    TensorD lin_in(2, 4, 4);
    Rng lin_rng(seed ^ 0x9e3779b9u);
    for (double& v : lin_in.data) v = lin_rng.uniform(-1.0, 1.0);
    LossFn squared;
    squared.value = [](const TensorD& h) {
        double acc = 0;
        for (double v : h.data) acc += v * v;
        return acc;
    };
    squared.grad = [](const TensorD& h) {
        TensorD g(h.channels, h.height, h.width);
        for (std::size_t i = 0; i < h.data.size(); ++i) g.data[i] = 2 * h.data[i];
        return g;
    };
    const GradCheckResult lin_res = grad_check(linear, lin_in, squared, seed);

    // Full pipeline probe under the detection loss.
    NetworkD comp = build<double>(probe_composite_spec(), seed + 1);
    TensorD comp_in(2, 8, 8);
    Rng comp_rng(seed ^ 0x7f4a7c15u);
    for (double& v : comp_in.data) v = comp_rng.uniform(0.0, 1.0);
    const std::vector<GroundTruth> gts = {{0, 0.3, 0.35, 0.35, 0.4}, {1, 0.7, 0.65, 0.3, 0.35}};
    const LsrConfig lsr{0.1, 2};
    const LossWeights weights;
    const std::vector<Anchor> anchors = comp.spec.anchors;
    LossFn det;
    det.value = [&](const TensorD& h) {
        return detection_loss(h, anchors, 2, gts, lsr, weights).total;
    };
    det.grad = [&](const TensorD& h) {
        TensorD g;
        detection_loss_grad(h, anchors, 2, gts, lsr, weights, g);
        return g;
    };
    const GradCheckResult comp_res = grad_check(comp, comp_in, det, seed + 1);

    const bool ok = lin_res.max_relative_error <= 1e-8 && comp_res.max_relative_error <= 1e-3;
    std::printf("linear probe    max relative error %.3e (%d params, %d kink skips)\n",
                lin_res.max_relative_error, lin_res.params_checked, lin_res.skipped_kinks);
    std::printf("composite probe max relative error %.3e (%d params, %d kink skips, worst %s[%zu])\n",
                comp_res.max_relative_error, comp_res.params_checked, comp_res.skipped_kinks,
                comp_res.worst_block.c_str(), comp_res.worst_index);
    std::printf("%s\n", ok ? "OK" : "FAILED");
    return ok ? 0 : 1;
}

int cmd_info(const std::string& weights) {
    NetworkSpec spec;
    if (weights.empty()) {
        spec = iyolo_spec(3);
    } else {
        const WeightsHeader h = peek_weights(weights);
        spec = h.layer_count == 12 ? tiny_spec(static_cast<int>(h.num_classes))
                                   : iyolo_spec(static_cast<int>(h.num_classes));
    }
    std::printf("%-6s %-14s %-8s %-9s %s\n", "number", "layer", "filters", "size", "output");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const NetworkSpec::Shape& s = spec.output_shapes[i];
        char filters[16] = "";
        char size[32] = "";
        switch (l.kind) {
            case LayerKind::Conv:
                std::snprintf(filters, sizeof filters, "%d", l.filters);
                std::snprintf(size, sizeof size, "%d*%d/1", l.kernel, l.kernel);
                break;
            case LayerKind::MaxPool:
                std::snprintf(size, sizeof size, "2*2/2");
                break;
            case LayerKind::Reorg:
                std::snprintf(size, sizeof size, "/%d", l.reorg_stride);
                break;
            case LayerKind::Route: {
                std::string srcs;
                for (int r : l.route_sources) {
                    if (!srcs.empty()) srcs += ",";
                    srcs += std::to_string(r);
                }
                std::snprintf(size, sizeof size, "<-%s", srcs.c_str());
                break;
            }
            case LayerKind::Detection:
                break;
        }
        std::printf("%-6zu %-14s %-8s %-9s %d*%d*%d\n", i, layer_kind_name(l.kind), filters,
                    size, s.channels, s.height, s.width);
    }
    std::printf("trainable parameters: %zu\n", parameter_count(spec));
    std::printf("kernel backend: %s\n", backend_name(active_backend()));
    return 0;
}

struct CropsArgs {
    std::string labels, out = "crops.txt";
    uint32_t seed = 1;
};

int cmd_crops(const CropsArgs& a) {
    const std::vector<GroundTruth> gts = to_ground_truths(read_annotations(a.labels));
    Rng rng(a.seed);
    const std::vector<CropSample> crops = generate_crops(gts, rng);

    std::ofstream out(a.out);
    if (!out) throw IoError("cannot open for writing: " + a.out);
    char line[256];
    for (const CropSample& c : crops) {
        const double cx = (c.box.x1 + c.box.x2) / 2, cy = (c.box.y1 + c.box.y2) / 2;
        const double w = c.box.x2 - c.box.x1, h = c.box.y2 - c.box.y1;
        std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g  # %s iou=%.3f\n",
                      std::max(0, c.class_id), cx, cy, w, h, sample_category_name(c.category),
                      c.iou);
        out << line;
    }
    if (!out) throw IoError("failed writing " + a.out);
    std::printf("%zu crops -> %s\n", crops.size(), a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-scale object detector: inference, evaluation, toy training"};
    app.require_subcommand(1);

    DetectArgs detect_args;
    CLI::App* detect = app.add_subcommand("detect", "run the detector on one image");
    detect->add_option("--weights", detect_args.weights, "weight file")->required();
    detect->add_option("--image", detect_args.image, "input P6 image")->required();
    detect->add_option("--conf", detect_args.conf, "confidence threshold");
    detect->add_option("--nms", detect_args.nms, "suppression overlap threshold");
    detect->add_option("--out", detect_args.out, "output annotation file");
    detect->add_option("--render", detect_args.render, "write a rendered copy here");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate over an annotated image dir");
    eval_cmd->add_option("--weights", eval_args.weights, "weight file")->required();
    eval_cmd->add_option("--images", eval_args.images, "directory of .ppm images")->required();
    eval_cmd->add_option("--labels", eval_args.labels, "directory of .txt annotations")
        ->required();
    eval_cmd->add_option("--conf", eval_args.conf, "confidence threshold");
    eval_cmd->add_option("--nms", eval_args.nms, "suppression overlap threshold");
    eval_cmd->add_option("--iou", eval_args.iou, "matching overlap threshold");
    eval_cmd->add_option("--out", eval_args.out, "output directory for CSVs");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train-toy", "train the reduced net on synthetic scenes");
    train_cmd->add_option("--seed", train_args.seed, "dataset and init seed");
    train_cmd->add_option("--iters", train_args.iters, "iteration count");
    train_cmd->add_option("--epsilon", train_args.epsilon, "label smoothing factor");
    train_cmd->add_option("--out", train_args.out, "output weight file");
    train_cmd->add_flag("--compare-ohem", train_args.compare_ohem,
                        "also run without hard-sample mining");

    uint32_t gradcheck_seed = 1;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--seed", gradcheck_seed, "probe seed");

    std::string info_weights;
    CLI::App* info = app.add_subcommand("info", "print the layer table");
    info->add_option("--weights", info_weights, "weight file (defaults to the full net)");

    CropsArgs crops_args;
    CLI::App* crops = app.add_subcommand("crops", "sample training crops for an annotation file");
    crops->add_option("--labels", crops_args.labels, "annotation file")->required();
    crops->add_option("--seed", crops_args.seed, "sampling seed");
    crops->add_option("--out", crops_args.out, "output crop annotation file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (const char* env = std::getenv("IYOLO_BACKEND")) {
            const std::string want(env);
            if (want == "scalar") {
                set_backend(Backend::Scalar);
            } else if (want == "avx2") {
                set_backend(Backend::Avx2);
            } else if (!want.empty()) {
                throw ValidationError("IYOLO_BACKEND must be scalar or avx2, got '" + want + "'");
            }
        }
        if (detect->parsed()) return cmd_detect(detect_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (train_cmd->parsed()) return cmd_train_toy(train_args);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
        if (info->parsed()) return cmd_info(info_weights);
        if (crops->parsed()) return cmd_crops(crops_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "error: no command\n");
    return 2;
}
