#include "iyolo/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "iyolo/errors.hpp"

namespace iyolo {

namespace {

// Reads one PPM header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, std::size_t& pos) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        ++pos;
        if (c == '#') {
            while ((c = in.get()) != EOF) {
                ++pos;
                if (c == '\n') break;
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) {
        throw ParseError(ParseError::Kind::Truncated, pos, "image header ends early");
    }
    return tok;
}

int header_int(std::istream& in, std::size_t& pos, const char* what) {
    const std::string tok = header_token(in, pos);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError(ParseError::Kind::BadValue, pos,
                         std::string("bad ") + what + " \"" + tok + "\" in image header");
    }
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::size_t pos = 0;

    char magic[2];
    in.read(magic, 2);
    if (in.gcount() != 2) {
        throw ParseError(ParseError::Kind::Truncated, 0, "file shorter than a magic number");
    }
    pos = 2;
    if (magic[0] != 'P' || magic[1] != '6') {
        throw ParseError(ParseError::Kind::UnsupportedFormat, 0,
                         std::string("unsupported image magic \"") + magic[0] + magic[1] +
                             "\" (only binary P6 is handled)");
    }

    const int w = header_int(in, pos, "width");
    const int h = header_int(in, pos, "height");
    const int maxval = header_int(in, pos, "maxval");
    if (w < 1 || h < 1) {
        throw ParseError(ParseError::Kind::BadValue, pos, "image dimensions must be >= 1");
    }
    if (maxval != 255) {
        throw ParseError(ParseError::Kind::BadValue, pos,
                         "maxval must be 255, got " + std::to_string(maxval));
    }

    const std::size_t want = static_cast<std::size_t>(w) * h * 3;
    std::vector<unsigned char> bytes(want);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(want));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got != want) {
        throw ParseError(ParseError::Kind::Truncated, pos + got,
                         "pixel payload expected " + std::to_string(want) + " bytes, got " +
                             std::to_string(got));
    }

    Tensor img(3, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
            img.at(0, y, x) = static_cast<float>(bytes[o]) / 255.0f;
            img.at(1, y, x) = static_cast<float>(bytes[o + 1]) / 255.0f;
            img.at(2, y, x) = static_cast<float>(bytes[o + 2]) / 255.0f;
        }
    }
    return img;
}

void write_ppm(const Tensor& image, const std::string& path) {
    if (image.channels != 3) {
        throw ShapeError("image tensors must have 3 channels, got " + image.shape_str());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.width) * image.height * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const std::size_t o = (static_cast<std::size_t>(y) * image.width + x) * 3;
            for (int c = 0; c < 3; ++c) {
                const float v = std::min(1.0f, std::max(0.0f, image.at(c, y, x)));
                bytes[o + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be >= 1x1");
    Tensor out(image.channels, out_h, out_w);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(image.height - 1,
                                    static_cast<int>(static_cast<long>(y) * image.height / out_h));
            for (int x = 0; x < out_w; ++x) {
                const int sx = std::min(
                    image.width - 1, static_cast<int>(static_cast<long>(x) * image.width / out_w));
                out.at(c, y, x) = image.at(c, sy, sx);
            }
        }
    }
    return out;
}

void class_color(int class_id, float& r, float& g, float& b) {
    static const float palette[3][3] = {
        {1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.2f, 0.4f, 1.0f}};
    const int i = ((class_id % 3) + 3) % 3;
    r = palette[i][0];
    g = palette[i][1];
    b = palette[i][2];
}

void draw_box(Tensor& image, const Box& normalized, float r, float g, float b) {
    if (image.channels != 3) {
        throw ShapeError("can only draw on 3-channel images, got " + image.shape_str());
    }
    const int W = image.width, H = image.height;
    int x1 = static_cast<int>(std::lround(normalized.x1 * W));
    int y1 = static_cast<int>(std::lround(normalized.y1 * H));
    int x2 = static_cast<int>(std::lround(normalized.x2 * W)) - 1;
    int y2 = static_cast<int>(std::lround(normalized.y2 * H)) - 1;
    x1 = std::max(0, std::min(W - 1, x1));
    x2 = std::max(0, std::min(W - 1, x2));
    y1 = std::max(0, std::min(H - 1, y1));
    y2 = std::max(0, std::min(H - 1, y2));

    auto paint = [&](int y, int x) {
        image.at(0, y, x) = r;
        image.at(1, y, x) = g;
        image.at(2, y, x) = b;
    };
    for (int t = 0; t < 2; ++t) {
        const int top = std::min(H - 1, y1 + t);
        const int bottom = std::max(0, y2 - t);
        for (int x = x1; x <= x2; ++x) {
            paint(top, x);
            paint(bottom, x);
        }
        const int left = std::min(W - 1, x1 + t);
        const int right = std::max(0, x2 - t);
        for (int y = y1; y <= y2; ++y) {
            paint(y, left);
            paint(y, right);
        }
    }
}

}  // namespace iyolo
