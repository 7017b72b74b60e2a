#pragma once

#include <string>
#include <vector>

#include "iyolo/boxes.hpp"

namespace iyolo {

// One detector output on one image.
struct Detection {
    int class_id = 0;
    Box box;
    double confidence = 0;
};

struct DetectionVerdict {
    bool is_tp = false;
    int gt_index = -1;
    bool class_correct = false;
};

struct MatchResult {
    std::vector<DetectionVerdict> detections;  // parallel to input order
    std::vector<bool> gt_matched;
    int tp = 0, fp = 0, fn = 0;
    int class_correct_tp = 0;
};

// Greedy class-agnostic matching: detections in descending confidence order
// (ties by input index) claim the unmatched gt of highest IoU when that IoU
// reaches the threshold. Class agreement is recorded, not required.
MatchResult match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                  double iou_threshold = 0.5);

struct MetricsReport {
    double detection_rate = 0;        // TP / (TP + FN)
    double error_detection_rate = 0;  // FP / (TP + FP), 0 when no detections
    double classification_rate = 0;   // class-correct TP / TP, 0 when no TP
    double error_classification_rate = 0;  // class-incorrect TP / (TP + FP)
};

// Corpus totals; throws ValidationError if the corpus has no ground truths.
MetricsReport metrics(const std::vector<MatchResult>& results);

void write_metrics_csv(const MetricsReport& report, const std::string& path);

struct PrPoint {
    double threshold = 0;
    double precision = 0;
    double recall = 0;
};

struct ImageEval {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
};

// One point per distinct confidence value, descending: keep detections with
// confidence >= threshold, rematch, report precision and recall.
std::vector<PrPoint> pr_curve(const std::vector<ImageEval>& corpus, double iou_threshold = 0.5);

void write_pr_csv(const std::vector<PrPoint>& curve, const std::string& path);

}  // namespace iyolo
