#pragma once

#include <string>
#include <vector>

#include "iyolo/boxes.hpp"
#include "iyolo/eval.hpp"

namespace iyolo {

// Text annotation lines: `class_id cx cy w h [confidence]`, whitespace
// separated, normalized coordinates, '#' starts a comment. Detector output
// carries the trailing confidence; ground-truth files do not.
struct Annotation {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
    bool has_confidence = false;
    double confidence = 0;
};

// Rejects lines with the wrong field count or unparseable numbers; the
// ParseError message carries the 1-based line number.
std::vector<Annotation> parse_annotations(const std::string& text);
std::vector<Annotation> read_annotations(const std::string& path);

// %.17g per value so parse(format(x)) reproduces x exactly.
std::string format_annotation(const Annotation& a);
void write_annotations(const std::vector<Annotation>& anns, const std::string& path);

std::vector<GroundTruth> to_ground_truths(const std::vector<Annotation>& anns);
Annotation from_detection(const Detection& det);
Detection to_detection(const Annotation& a);

}  // namespace iyolo
