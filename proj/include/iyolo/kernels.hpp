#pragma once

#include <utility>
#include <vector>

#include "iyolo/tensor.hpp"

namespace iyolo {

enum class Activation { Linear, Leaky };

// Parameters of one convolution layer: 1x1 or 3x3, stride 1, zero same-padding.
// Either a plain bias or inference-form batch norm (y = gamma*(x-mu)/sqrt(var+eps)+beta)
// is applied after the convolution, then the activation.
template <typename T>
struct ConvParamsT {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 3;  // 1 or 3
    Activation activation = Activation::Leaky;
    bool has_bn = true;

    std::vector<T> weights;  // [oc][ic][ky][kx]
    std::vector<T> bias;     // [oc], when !has_bn
    std::vector<T> gamma, beta, running_mean, running_var;  // [oc] each, when has_bn
    T bn_epsilon = T(1e-5);

    void validate() const;  // throws ValidationError
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
    }
};

using ConvParams = ConvParamsT<float>;

// Intermediates the backward pass needs.
template <typename T>
struct ConvCacheT {
    TensorT<T> conv_out;  // raw convolution, before bias/BN
    TensorT<T> pre_act;   // after bias/BN, before activation
};

template <typename T>
struct ConvGradsT {
    TensorT<T> input;
    std::vector<T> weights;
    std::vector<T> bias;         // when !has_bn
    std::vector<T> gamma, beta;  // when has_bn
};

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvParamsT<T>& p,
                  ConvCacheT<T>* cache = nullptr);

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                              const ConvParamsT<T>& p, const ConvCacheT<T>& cache);

// 2x2/2 max pooling. Requires even spatial dims.
template <typename T>
TensorT<T> maxpool2(const TensorT<T>& input);

// Routes each gradient element to the first (row-major) maximum of its window.
template <typename T>
TensorT<T> maxpool2_backward(const TensorT<T>& grad_out, const TensorT<T>& input);

// Space-to-depth: out[c*s*s + dy*s + dx][y][x] = in[c][s*y+dy][s*x+dx].
template <typename T>
TensorT<T> reorg(const TensorT<T>& input, int stride = 2);

// Exact inverse of reorg; also the backward pass.
template <typename T>
TensorT<T> reorg_inverse(const TensorT<T>& input, int stride = 2);

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);

// Backward of concat_channels: splits the gradient at channel c_a.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& t, int c_a);

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.1));

template <typename T>
TensorT<T> leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x,
                               T slope = T(0.1));

// Numerically stable logistic; never overflows or yields NaN for finite input.
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& x);

double sigmoid_scalar(double x);

}  // namespace iyolo
