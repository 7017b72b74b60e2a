#include "iyolo/weights_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "iyolo/errors.hpp"

namespace iyolo {

namespace {

constexpr char kMagic[4] = {'I', 'Y', 'W', '1'};

struct Reader {
    std::istream& in;
    std::size_t pos = 0;

    void bytes(void* dst, std::size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        const std::size_t got = static_cast<std::size_t>(in.gcount());
        if (got != n) {
            throw ParseError(ParseError::Kind::Truncated, pos,
                             std::string("truncated while reading ") + what + ": expected " +
                                 std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                                 ", got " + std::to_string(got));
        }
        pos += n;
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint8_t u8(const char* what) {
        unsigned char b;
        bytes(&b, 1, what);
        return b;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    void f32_vec(std::vector<float>& dst, std::size_t n, const char* what) {
        dst.resize(n);
        for (std::size_t i = 0; i < n; ++i) dst[i] = f32(what);
    }
};

struct Writer {
    std::ostream& out;

    void bytes(const void* src, std::size_t n) {
        out.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
    }

    void u32(uint32_t v) {
        const unsigned char b[4] = {
            static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
            static_cast<unsigned char>((v >> 16) & 0xff),
            static_cast<unsigned char>((v >> 24) & 0xff)};
        bytes(b, 4);
    }

    void u8(uint8_t v) { bytes(&v, 1); }

    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

    void f32_vec(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
};

WeightsHeader read_header(Reader& r) {
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (magic[0] != kMagic[0] || magic[1] != kMagic[1] || magic[2] != kMagic[2] ||
        magic[3] != kMagic[3]) {
        throw ParseError(ParseError::Kind::BadMagic, 0,
                         "bad magic: expected \"IYW1\" at offset 0");
    }
    WeightsHeader h;
    h.version = r.u32("version");
    if (h.version != 1) {
        throw ParseError(ParseError::Kind::BadValue, r.pos - 4,
                         "unsupported version " + std::to_string(h.version) + " at offset " +
                             std::to_string(r.pos - 4));
    }
    h.num_classes = r.u32("num_classes");
    const uint32_t anchor_count = r.u32("anchor_count");
    if (anchor_count == 0 || anchor_count > 1024) {
        throw ParseError(ParseError::Kind::BadValue, r.pos - 4,
                         "implausible anchor count " + std::to_string(anchor_count));
    }
    for (uint32_t i = 0; i < anchor_count; ++i) {
        Anchor a;
        a.w = r.f32("anchor w");
        a.h = r.f32("anchor h");
        h.anchors.push_back(a);
    }
    h.layer_count = r.u32("layer_count");
    return h;
}

void check_finite(const std::vector<float>& v, std::size_t offset_after, const char* what) {
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw ParseError(ParseError::Kind::BadValue, offset_after,
                             std::string("non-finite value in ") + what);
        }
    }
}

}  // namespace

void save_weights(const Network& net, std::ostream& out) {
    Writer w{out};
    w.bytes(kMagic, 4);
    w.u32(1);
    w.u32(static_cast<uint32_t>(net.spec.num_classes));
    w.u32(static_cast<uint32_t>(net.spec.anchors.size()));
    for (const Anchor& a : net.spec.anchors) {
        w.f32(a.w);
        w.f32(a.h);
    }
    w.u32(static_cast<uint32_t>(net.params.size()));
    int ci = 0;
    for (const LayerSpec& l : net.spec.layers) {
        if (l.kind != LayerKind::Conv) continue;
        const ConvParams& p = net.params[ci++];
        w.u32(static_cast<uint32_t>(l.index));
        w.u8(p.has_bn ? 1 : 0);
        if (p.has_bn) {
            w.f32_vec(p.gamma);
            w.f32_vec(p.beta);
            w.f32_vec(p.running_mean);
            w.f32_vec(p.running_var);
        } else {
            w.f32_vec(p.bias);
        }
        w.f32_vec(p.weights);
    }
    if (!out) throw IoError("failed writing weight stream");
}

void save_weights(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    save_weights(net, out);
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

void load_weights(Network& net, std::istream& in) {
    Reader r{in};
    const WeightsHeader h = read_header(r);
    if (h.num_classes != static_cast<uint32_t>(net.spec.num_classes)) {
        throw ParseError(ParseError::Kind::ShapeMismatch, 8,
                         "file has " + std::to_string(h.num_classes) + " classes, network has " +
                             std::to_string(net.spec.num_classes));
    }
    if (h.anchors.size() != net.spec.anchors.size()) {
        throw ParseError(ParseError::Kind::ShapeMismatch, 12,
                         "file has " + std::to_string(h.anchors.size()) +
                             " anchors, network has " + std::to_string(net.spec.anchors.size()));
    }
    for (std::size_t i = 0; i < h.anchors.size(); ++i) {
        if (h.anchors[i].w != net.spec.anchors[i].w || h.anchors[i].h != net.spec.anchors[i].h) {
            throw ParseError(ParseError::Kind::ShapeMismatch, 16 + i * 8,
                             "anchor " + std::to_string(i) + " differs from the network's");
        }
    }
    if (h.layer_count != net.params.size()) {
        throw ParseError(ParseError::Kind::ShapeMismatch, r.pos - 4,
                         "file has " + std::to_string(h.layer_count) +
                             " trainable layers, network has " +
                             std::to_string(net.params.size()));
    }

    int ci = 0;
    for (const LayerSpec& l : net.spec.layers) {
        if (l.kind != LayerKind::Conv) continue;
        ConvParams& p = net.params[ci++];
        const std::size_t layer_off = r.pos;
        const uint32_t idx = r.u32("layer index");
        if (idx != static_cast<uint32_t>(l.index)) {
            throw ParseError(ParseError::Kind::ShapeMismatch, layer_off,
                             "expected layer " + std::to_string(l.index) + " at offset " +
                                 std::to_string(layer_off) + ", file has layer " +
                                 std::to_string(idx));
        }
        const uint8_t has_bn = r.u8("has_bn flag");
        if (has_bn > 1) {
            throw ParseError(ParseError::Kind::BadValue, r.pos - 1,
                             "has_bn flag must be 0 or 1, got " + std::to_string(has_bn));
        }
        if ((has_bn == 1) != p.has_bn) {
            throw ParseError(ParseError::Kind::ShapeMismatch, r.pos - 1,
                             "layer " + std::to_string(l.index) +
                                 " batch-norm flag differs from the network's");
        }
        const std::size_t oc = static_cast<std::size_t>(p.out_channels);
        if (p.has_bn) {
            r.f32_vec(p.gamma, oc, "gamma");
            check_finite(p.gamma, r.pos, "gamma");
            r.f32_vec(p.beta, oc, "beta");
            check_finite(p.beta, r.pos, "beta");
            r.f32_vec(p.running_mean, oc, "running mean");
            check_finite(p.running_mean, r.pos, "running mean");
            r.f32_vec(p.running_var, oc, "running variance");
            for (float v : p.running_var) {
                if (!(v > 0.0f) || !std::isfinite(v)) {
                    throw ParseError(ParseError::Kind::BadValue, r.pos,
                                     "running variance must be finite and positive in layer " +
                                         std::to_string(l.index));
                }
            }
        } else {
            r.f32_vec(p.bias, oc, "bias");
            check_finite(p.bias, r.pos, "bias");
        }
        r.f32_vec(p.weights, p.weight_count(), "weights");
        check_finite(p.weights, r.pos, "weights");
        p.validate();
    }

    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) {
        throw ParseError(ParseError::Kind::BadValue, r.pos,
                         "trailing data after the last layer at offset " +
                             std::to_string(r.pos));
    }
}

void load_weights(Network& net, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    load_weights(net, in);
}

WeightsHeader peek_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    Reader r{in};
    return read_header(r);
}

}  // namespace iyolo
