#include "iyolo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>

#include "iyolo/backend.hpp"
#include "iyolo/errors.hpp"
#include "kernels_avx2.hpp"

namespace iyolo {

template <typename T>
void ConvParamsT<T>::validate() const {
    if (out_channels < 1 || in_channels < 1) {
        throw ValidationError("conv channels must be >= 1, got " + std::to_string(out_channels) +
                              "<-" + std::to_string(in_channels));
    }
    if (kernel != 1 && kernel != 3) {
        throw ValidationError("conv kernel must be 1 or 3, got " + std::to_string(kernel));
    }
    const std::size_t oc = static_cast<std::size_t>(out_channels);
    if (weights.size() != weight_count()) {
        throw ValidationError("conv weight count " + std::to_string(weights.size()) +
                              " does not match shape (want " + std::to_string(weight_count()) +
                              ")");
    }
    if (has_bn) {
        if (gamma.size() != oc || beta.size() != oc || running_mean.size() != oc ||
            running_var.size() != oc) {
            throw ValidationError("batch-norm parameter vectors must each have " +
                                  std::to_string(oc) + " entries");
        }
        for (T v : running_var) {
            if (!(v > T(0))) throw ValidationError("batch-norm variance must be positive");
        }
    } else if (bias.size() != oc) {
        throw ValidationError("bias must have " + std::to_string(oc) + " entries, got " +
                              std::to_string(bias.size()));
    }
}

namespace {

// Raw convolution, zero same-padding, stride 1. One double accumulator per
// output element, summation order ic -> ky -> kx; the AVX2 lane replicates
// this order exactly.
template <typename T>
void conv_core_scalar(const TensorT<T>& input, const ConvParamsT<T>& p, TensorT<T>& out) {
    const int H = input.height, W = input.width;
    const int k = p.kernel, pad = k / 2;
    for (int oc = 0; oc < p.out_channels; ++oc) {
        const T* wc = p.weights.data() +
                      static_cast<std::size_t>(oc) * p.in_channels * k * k;
        for (int y = 0; y < H; ++y) {
            T* orow = out.row(oc, y);
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int ic = 0; ic < p.in_channels; ++ic) {
                    const T* wk = wc + static_cast<std::size_t>(ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* irow = input.row(ic, iy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = x + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            acc += static_cast<double>(wk[ky * k + kx]) *
                                   static_cast<double>(irow[ix]);
                        }
                    }
                }
                orow[x] = static_cast<T>(acc);
            }
        }
    }
}

template <typename T>
void conv_core(const TensorT<T>& input, const ConvParamsT<T>& p, TensorT<T>& out) {
    conv_core_scalar(input, p, out);
}

template <>
void conv_core<float>(const Tensor& input, const ConvParams& p, Tensor& out) {
    if (active_backend() == Backend::Avx2) {
        detail::conv_core_avx2(input, p, out);
    } else {
        conv_core_scalar(input, p, out);
    }
}

// Per-channel scale/shift folding bias or inference-form batch norm.
// Computed as round(scale * v) + shift in two rounded double steps so every
// lane can reproduce it with a mul followed by an add.
template <typename T>
void channel_affine(int oc, const ConvParamsT<T>& p, double& scale, double& shift) {
    if (p.has_bn) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[oc]) +
                                           static_cast<double>(p.bn_epsilon));
        scale = static_cast<double>(p.gamma[oc]) * inv;
        shift = static_cast<double>(p.beta[oc]) -
                static_cast<double>(p.running_mean[oc]) * scale;
    } else {
        scale = 1.0;
        shift = static_cast<double>(p.bias[oc]);
    }
}

template <typename T>
void apply_affine(TensorT<T>& t, const ConvParamsT<T>& p) {
    const std::size_t plane = static_cast<std::size_t>(t.height) * t.width;
    for (int oc = 0; oc < p.out_channels; ++oc) {
        double scale = 1, shift = 0;
        channel_affine(oc, p, scale, shift);
        T* base = t.data.data() + oc * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            base[i] = static_cast<T>(static_cast<double>(base[i]) * scale + shift);
        }
    }
}

template <typename T>
void apply_activation(TensorT<T>& t, Activation act) {
    if (act == Activation::Linear) return;
    const T slope = T(0.1);
    for (T& v : t.data) v = v > T(0) ? v : slope * v;
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvParamsT<T>& p, ConvCacheT<T>* cache) {
    p.validate();
    if (input.channels != p.in_channels) {
        throw ShapeError("conv input has " + std::to_string(input.channels) +
                         " channels, layer wants " + std::to_string(p.in_channels));
    }
    TensorT<T> out(p.out_channels, input.height, input.width);
    conv_core(input, p, out);
    if (cache) cache->conv_out = out;
    apply_affine(out, p);
    if (cache) cache->pre_act = out;
    apply_activation(out, p.activation);
    return out;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                              const ConvParamsT<T>& p, const ConvCacheT<T>& cache) {
    p.validate();
    const int H = input.height, W = input.width;
    if (grad_out.channels != p.out_channels || grad_out.height != H || grad_out.width != W) {
        throw ShapeError("conv backward gradient shape " + grad_out.shape_str() +
                         " does not match output");
    }
    const int k = p.kernel, pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    // Through the activation.
    TensorT<T> g_pre = grad_out;
    if (p.activation == Activation::Leaky) {
        const T slope = T(0.1);
        for (std::size_t i = 0; i < g_pre.data.size(); ++i) {
            if (!(cache.pre_act.data[i] > T(0))) g_pre.data[i] *= slope;
        }
    }

    ConvGradsT<T> grads;
    grads.weights.assign(p.weight_count(), T(0));

    // Through the affine: pre = scale * conv + shift.
    TensorT<T> g_conv(p.out_channels, H, W);
    if (p.has_bn) {
        grads.gamma.assign(p.out_channels, T(0));
        grads.beta.assign(p.out_channels, T(0));
        for (int oc = 0; oc < p.out_channels; ++oc) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[oc]) +
                                               static_cast<double>(p.bn_epsilon));
            const double scale = static_cast<double>(p.gamma[oc]) * inv;
            const double mu = static_cast<double>(p.running_mean[oc]);
            const T* g = g_pre.data.data() + oc * plane;
            const T* c = cache.conv_out.data.data() + oc * plane;
            T* gc = g_conv.data.data() + oc * plane;
            double dg = 0, db = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double gi = static_cast<double>(g[i]);
                dg += gi * (static_cast<double>(c[i]) - mu) * inv;
                db += gi;
                gc[i] = static_cast<T>(gi * scale);
            }
            grads.gamma[oc] = static_cast<T>(dg);
            grads.beta[oc] = static_cast<T>(db);
        }
    } else {
        grads.bias.assign(p.out_channels, T(0));
        for (int oc = 0; oc < p.out_channels; ++oc) {
            const T* g = g_pre.data.data() + oc * plane;
            T* gc = g_conv.data.data() + oc * plane;
            double db = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                db += static_cast<double>(g[i]);
                gc[i] = g[i];
            }
            grads.bias[oc] = static_cast<T>(db);
        }
    }

    // Weight gradients.
    for (int oc = 0; oc < p.out_channels; ++oc) {
        for (int ic = 0; ic < p.in_channels; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0;
                    for (int y = 0; y < H; ++y) {
                        const int iy = y + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* g = g_conv.row(oc, y);
                        const T* irow = input.row(ic, iy);
                        for (int x = 0; x < W; ++x) {
                            const int ix = x + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            acc += static_cast<double>(g[x]) * static_cast<double>(irow[ix]);
                        }
                    }
                    grads.weights[((static_cast<std::size_t>(oc) * p.in_channels + ic) * k +
                                   ky) *
                                      k +
                                  kx] = static_cast<T>(acc);
                }
            }
        }
    }

    // Input gradients (full correlation with the flipped kernel).
    grads.input = TensorT<T>(p.in_channels, H, W);
    for (int ic = 0; ic < p.in_channels; ++ic) {
        for (int iy = 0; iy < H; ++iy) {
            T* gi = grads.input.row(ic, iy);
            for (int ix = 0; ix < W; ++ix) {
                double acc = 0;
                for (int oc = 0; oc < p.out_channels; ++oc) {
                    const T* wk = p.weights.data() +
                                  (static_cast<std::size_t>(oc) * p.in_channels + ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int oy = iy - ky + pad;
                        if (oy < 0 || oy >= H) continue;
                        const T* g = g_conv.row(oc, oy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int ox = ix - kx + pad;
                            if (ox < 0 || ox >= W) continue;
                            acc += static_cast<double>(g[ox]) *
                                   static_cast<double>(wk[ky * k + kx]);
                        }
                    }
                }
                gi[ix] = static_cast<T>(acc);
            }
        }
    }
    return grads;
}

namespace {

template <typename T>
void maxpool2_scalar(const TensorT<T>& input, TensorT<T>& out) {
    for (int c = 0; c < input.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            const T* r0 = input.row(c, 2 * y);
            const T* r1 = input.row(c, 2 * y + 1);
            T* o = out.row(c, y);
            for (int x = 0; x < out.width; ++x) {
                T m = r0[2 * x];
                if (r0[2 * x + 1] > m) m = r0[2 * x + 1];
                if (r1[2 * x] > m) m = r1[2 * x];
                if (r1[2 * x + 1] > m) m = r1[2 * x + 1];
                o[x] = m;
            }
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> maxpool2(const TensorT<T>& input) {
    if (input.height % 2 != 0 || input.width % 2 != 0) {
        throw ShapeError("maxpool2 needs even spatial dims, got " + input.shape_str());
    }
    TensorT<T> out(input.channels, input.height / 2, input.width / 2);
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2) {
            detail::maxpool2_avx2(input, out);
            return out;
        }
    }
    maxpool2_scalar(input, out);
    return out;
}

template <typename T>
TensorT<T> maxpool2_backward(const TensorT<T>& grad_out, const TensorT<T>& input) {
    if (input.height % 2 != 0 || input.width % 2 != 0) {
        throw ShapeError("maxpool2 needs even spatial dims, got " + input.shape_str());
    }
    if (grad_out.channels != input.channels || grad_out.height != input.height / 2 ||
        grad_out.width != input.width / 2) {
        throw ShapeError("maxpool2 backward gradient shape " + grad_out.shape_str() +
                         " does not match pooled output");
    }
    TensorT<T> gi(input.channels, input.height, input.width);
    for (int c = 0; c < input.channels; ++c) {
        for (int y = 0; y < grad_out.height; ++y) {
            for (int x = 0; x < grad_out.width; ++x) {
                // First row-major maximum wins.
                int by = 2 * y, bx = 2 * x;
                T best = input.at(c, by, bx);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const T v = input.at(c, 2 * y + dy, 2 * x + dx);
                        if (v > best) {
                            best = v;
                            by = 2 * y + dy;
                            bx = 2 * x + dx;
                        }
                    }
                }
                gi.at(c, by, bx) += grad_out.at(c, y, x);
            }
        }
    }
    return gi;
}

template <typename T>
TensorT<T> reorg(const TensorT<T>& input, int stride) {
    const int s = stride;
    if (s < 1 || input.height % s != 0 || input.width % s != 0) {
        throw ShapeError("reorg stride " + std::to_string(s) + " does not divide " +
                         input.shape_str());
    }
    TensorT<T> out(input.channels * s * s, input.height / s, input.width / s);
    for (int c = 0; c < input.channels; ++c) {
        for (int dy = 0; dy < s; ++dy) {
            for (int dx = 0; dx < s; ++dx) {
                const int oc = c * s * s + dy * s + dx;
                for (int y = 0; y < out.height; ++y) {
                    const T* irow = input.row(c, s * y + dy);
                    T* orow = out.row(oc, y);
                    for (int x = 0; x < out.width; ++x) orow[x] = irow[s * x + dx];
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> reorg_inverse(const TensorT<T>& input, int stride) {
    const int s = stride;
    if (s < 1 || input.channels % (s * s) != 0) {
        throw ShapeError("reorg inverse needs channels divisible by " + std::to_string(s * s) +
                         ", got " + input.shape_str());
    }
    TensorT<T> out(input.channels / (s * s), input.height * s, input.width * s);
    for (int c = 0; c < out.channels; ++c) {
        for (int dy = 0; dy < s; ++dy) {
            for (int dx = 0; dx < s; ++dx) {
                const int ic = c * s * s + dy * s + dx;
                for (int y = 0; y < input.height; ++y) {
                    const T* irow = input.row(ic, y);
                    T* orow = out.row(c, s * y + dy);
                    for (int x = 0; x < input.width; ++x) orow[s * x + dx] = irow[x];
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError("concat spatial mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    TensorT<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& t, int c_a) {
    if (c_a < 1 || c_a >= t.channels) {
        throw ShapeError("split at channel " + std::to_string(c_a) + " outside " +
                         t.shape_str());
    }
    TensorT<T> a(c_a, t.height, t.width);
    TensorT<T> b(t.channels - c_a, t.height, t.width);
    std::copy(t.data.begin(), t.data.begin() + a.data.size(), a.data.begin());
    std::copy(t.data.begin() + a.data.size(), t.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
    TensorT<T> out(x.channels, x.height, x.width);
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2) {
            detail::leaky_relu_avx2(x.data.data(), out.data.data(), x.data.size(), slope);
            return out;
        }
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const T v = x.data[i];
        out.data[i] = v > T(0) ? v : slope * v;
    }
    return out;
}

template <typename T>
TensorT<T> leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x, T slope) {
    if (!grad_out.same_shape(x)) {
        throw ShapeError("leaky backward shape mismatch: " + grad_out.shape_str() + " vs " +
                         x.shape_str());
    }
    TensorT<T> gi(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        gi.data[i] = x.data[i] > T(0) ? grad_out.data[i] : slope * grad_out.data[i];
    }
    return gi;
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = static_cast<T>(sigmoid_scalar(static_cast<double>(x.data[i])));
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& x) {
    if (!grad_out.same_shape(x)) {
        throw ShapeError("sigmoid backward shape mismatch: " + grad_out.shape_str() + " vs " +
                         x.shape_str());
    }
    TensorT<T> gi(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double s = sigmoid_scalar(static_cast<double>(x.data[i]));
        gi.data[i] = static_cast<T>(static_cast<double>(grad_out.data[i]) * s * (1.0 - s));
    }
    return gi;
}

template struct ConvParamsT<float>;
template struct ConvParamsT<double>;

template Tensor conv2d<float>(const Tensor&, const ConvParams&, ConvCacheT<float>*);
template TensorD conv2d<double>(const TensorD&, const ConvParamsT<double>&, ConvCacheT<double>*);
template ConvGradsT<float> conv2d_backward<float>(const Tensor&, const Tensor&,
                                                  const ConvParams&, const ConvCacheT<float>&);
template ConvGradsT<double> conv2d_backward<double>(const TensorD&, const TensorD&,
                                                    const ConvParamsT<double>&,
                                                    const ConvCacheT<double>&);
template Tensor maxpool2<float>(const Tensor&);
template TensorD maxpool2<double>(const TensorD&);
template Tensor maxpool2_backward<float>(const Tensor&, const Tensor&);
template TensorD maxpool2_backward<double>(const TensorD&, const TensorD&);
template Tensor reorg<float>(const Tensor&, int);
template TensorD reorg<double>(const TensorD&, int);
template Tensor reorg_inverse<float>(const Tensor&, int);
template TensorD reorg_inverse<double>(const TensorD&, int);
template Tensor concat_channels<float>(const Tensor&, const Tensor&);
template TensorD concat_channels<double>(const TensorD&, const TensorD&);
template std::pair<Tensor, Tensor> split_channels<float>(const Tensor&, int);
template std::pair<TensorD, TensorD> split_channels<double>(const TensorD&, int);
template Tensor leaky_relu<float>(const Tensor&, float);
template TensorD leaky_relu<double>(const TensorD&, double);
template Tensor leaky_relu_backward<float>(const Tensor&, const Tensor&, float);
template TensorD leaky_relu_backward<double>(const TensorD&, const TensorD&, double);
template Tensor sigmoid<float>(const Tensor&);
template TensorD sigmoid<double>(const TensorD&);
template Tensor sigmoid_backward<float>(const Tensor&, const Tensor&);
template TensorD sigmoid_backward<double>(const TensorD&, const TensorD&);

}  // namespace iyolo
