#include "iyolo/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "iyolo/errors.hpp"

namespace iyolo {

MatchResult match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                  double iou_threshold) {
    MatchResult r;
    r.detections.assign(dets.size(), DetectionVerdict{});
    r.gt_matched.assign(gts.size(), false);

    // Confidence order, ties by input index.
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].confidence > dets[b].confidence;
    });

    for (std::size_t oi : order) {
        const Detection& d = dets[oi];
        int best_g = -1;
        double best = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (r.gt_matched[g]) continue;
            const double v = iou(d.box, gts[g].to_box());
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best >= iou_threshold) {
            r.gt_matched[best_g] = true;
            r.detections[oi].is_tp = true;
            r.detections[oi].gt_index = best_g;
            r.detections[oi].class_correct = d.class_id == gts[best_g].class_id;
            ++r.tp;
            if (r.detections[oi].class_correct) ++r.class_correct_tp;
        } else {
            ++r.fp;
        }
    }
    r.fn = static_cast<int>(gts.size()) - r.tp;
    return r;
}

MetricsReport metrics(const std::vector<MatchResult>& results) {
    long tp = 0, fp = 0, fn = 0, correct = 0;
    for (const MatchResult& r : results) {
        tp += r.tp;
        fp += r.fp;
        fn += r.fn;
        correct += r.class_correct_tp;
    }
    if (tp + fn == 0) {
        throw ValidationError("evaluation corpus has no ground truths");
    }
    MetricsReport m;
    m.detection_rate = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.error_detection_rate =
        tp + fp == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(tp + fp);
    m.classification_rate =
        tp == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(tp);
    m.error_classification_rate =
        tp + fp == 0 ? 0.0
                     : static_cast<double>(tp - correct) / static_cast<double>(tp + fp);
    return m;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "detection_rate,error_detection_rate,classification_rate,error_classification_"
           "rate\n";
    char line[256];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", report.detection_rate,
                  report.error_detection_rate, report.classification_rate,
                  report.error_classification_rate);
    out << line;
    if (!out) throw IoError("failed writing " + path);
}

std::vector<PrPoint> pr_curve(const std::vector<ImageEval>& corpus, double iou_threshold) {
    std::set<double, std::greater<double>> thresholds;
    for (const ImageEval& img : corpus) {
        for (const Detection& d : img.dets) thresholds.insert(d.confidence);
    }
    std::vector<PrPoint> curve;
    for (double t : thresholds) {
        long tp = 0, fp = 0, fn = 0;
        for (const ImageEval& img : corpus) {
            std::vector<Detection> kept;
            for (const Detection& d : img.dets) {
                if (d.confidence >= t) kept.push_back(d);
            }
            const MatchResult r = match(kept, img.gts, iou_threshold);
            tp += r.tp;
            fp += r.fp;
            fn += r.fn;
        }
        PrPoint p;
        p.threshold = t;
        p.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        p.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        curve.push_back(p);
    }
    return curve;
}

void write_pr_csv(const std::vector<PrPoint>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "threshold,precision,recall\n";
    char line[256];
    for (const PrPoint& p : curve) {
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.threshold, p.precision,
                      p.recall);
        out << line;
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace iyolo
