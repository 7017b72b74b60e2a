#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "iyolo/errors.hpp"

namespace iyolo {

// Dense rank-3 feature volume, channel-major then row-major:
// index(c, y, x) = c*H*W + y*W + x. All dimensions >= 1.
template <typename T>
struct TensorT {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    TensorT() = default;

    TensorT(int c, int h, int w, T fill = T(0)) : channels(c), height(h), width(w) {
        if (c < 1 || h < 1 || w < 1) {
            throw ShapeError("tensor dimensions must be >= 1, got " + std::to_string(c) + "x" +
                             std::to_string(h) + "x" + std::to_string(w));
        }
        data.assign(static_cast<std::size_t>(c) * h * w, fill);
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }

    T& at(int c, int y, int x) { return data[index(c, y, x)]; }
    const T& at(int c, int y, int x) const { return data[index(c, y, x)]; }

    // Pointer to the start of row y of channel c.
    T* row(int c, int y) { return data.data() + index(c, y, 0); }
    const T* row(int c, int y) const { return data.data() + index(c, y, 0); }

    bool same_shape(const TensorT& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" +
               std::to_string(width);
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T, typename U>
TensorT<T> tensor_cast(const TensorT<U>& src) {
    TensorT<T> out(src.channels, src.height, src.width);
    for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<T>(src.data[i]);
    return out;
}

}  // namespace iyolo
