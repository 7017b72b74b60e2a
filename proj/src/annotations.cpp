#include "iyolo/annotations.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "iyolo/errors.hpp"

namespace iyolo {

namespace {

ParseError line_error(int line_no, const std::string& msg) {
    return ParseError(ParseError::Kind::BadValue, 0,
                      "line " + std::to_string(line_no) + ": " + msg);
}

double parse_real(const std::string& tok, int line_no, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw line_error(line_no, std::string("bad ") + what + " \"" + tok + "\"");
    }
}

}  // namespace

std::vector<Annotation> parse_annotations(const std::string& text) {
    std::vector<Annotation> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);

        std::istringstream fields(line);
        std::vector<std::string> toks;
        std::string tok;
        while (fields >> tok) toks.push_back(tok);
        if (toks.empty()) continue;
        if (toks.size() != 5 && toks.size() != 6) {
            throw line_error(line_no, "expected 5 or 6 fields, got " +
                                          std::to_string(toks.size()));
        }

        Annotation a;
        const double cls = parse_real(toks[0], line_no, "class id");
        if (cls != static_cast<int>(cls) || cls < 0) {
            throw line_error(line_no, "class id must be a non-negative integer");
        }
        a.class_id = static_cast<int>(cls);
        a.cx = parse_real(toks[1], line_no, "center x");
        a.cy = parse_real(toks[2], line_no, "center y");
        a.w = parse_real(toks[3], line_no, "width");
        a.h = parse_real(toks[4], line_no, "height");
        if (a.cx < 0 || a.cx > 1 || a.cy < 0 || a.cy > 1) {
            throw line_error(line_no, "center must lie in [0,1]");
        }
        if (!(a.w > 0) || !(a.h > 0)) {
            throw line_error(line_no, "width and height must be positive");
        }
        if (toks.size() == 6) {
            a.has_confidence = true;
            a.confidence = parse_real(toks[5], line_no, "confidence");
            if (a.confidence < 0 || a.confidence > 1) {
                throw line_error(line_no, "confidence must lie in [0,1]");
            }
        }
        out.push_back(a);
    }
    return out;
}

std::vector<Annotation> read_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str());
}

std::string format_annotation(const Annotation& a) {
    char line[256];
    if (a.has_confidence) {
        std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g %.17g", a.class_id, a.cx,
                      a.cy, a.w, a.h, a.confidence);
    } else {
        std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g", a.class_id, a.cx, a.cy,
                      a.w, a.h);
    }
    return line;
}

void write_annotations(const std::vector<Annotation>& anns, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const Annotation& a : anns) out << format_annotation(a) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

std::vector<GroundTruth> to_ground_truths(const std::vector<Annotation>& anns) {
    std::vector<GroundTruth> out;
    out.reserve(anns.size());
    for (const Annotation& a : anns) {
        GroundTruth gt;
        gt.class_id = a.class_id;
        gt.cx = a.cx;
        gt.cy = a.cy;
        gt.w = a.w;
        gt.h = a.h;
        out.push_back(gt);
    }
    return out;
}

Annotation from_detection(const Detection& det) {
    Annotation a;
    a.class_id = det.class_id;
    a.cx = (det.box.x1 + det.box.x2) / 2;
    a.cy = (det.box.y1 + det.box.y2) / 2;
    a.w = det.box.x2 - det.box.x1;
    a.h = det.box.y2 - det.box.y1;
    a.has_confidence = true;
    a.confidence = det.confidence;
    return a;
}

Detection to_detection(const Annotation& a) {
    Detection d;
    d.class_id = a.class_id;
    d.box = Box{a.cx - a.w / 2, a.cy - a.h / 2, a.cx + a.w / 2, a.cy + a.h / 2};
    d.confidence = a.has_confidence ? a.confidence : 1.0;
    return d;
}

}  // namespace iyolo
