#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iyolo/boxes.hpp"
#include "iyolo/kernels.hpp"
#include "iyolo/rng.hpp"
#include "iyolo/tensor.hpp"

namespace iyolo {

enum class LayerKind { Conv, MaxPool, Route, Reorg, Detection };

const char* layer_kind_name(LayerKind kind);

// One row of the architecture table. Route layers concatenate the outputs of
// route_sources (earlier layer indices) along channels; a single source is a
// plain skip. Reorg is stride-2 space-to-depth.
struct LayerSpec {
    int index = 0;
    LayerKind kind = LayerKind::Conv;
    int filters = 0;           // conv only
    int kernel = 0;            // conv only, 1 or 3
    bool batch_norm = false;   // conv only
    Activation activation = Activation::Linear;  // conv only
    std::vector<int> route_sources;
    int reorg_stride = 2;
};

// Architecture plus head configuration. Shapes are propagated once and kept
// alongside the layer table so consumers can assert them.
struct NetworkSpec {
    int input_channels = 3;
    int input_size = 416;  // square input
    std::vector<LayerSpec> layers;
    std::vector<Anchor> anchors;
    int num_classes = 0;

    int detection_channels() const {
        return static_cast<int>(anchors.size()) * (5 + num_classes);
    }
    int grid_cells() const;  // spatial size of the detection layer input

    // Per-layer output shapes, filled by propagate_shapes().
    struct Shape {
        int channels = 0, height = 0, width = 0;
    };
    std::vector<Shape> output_shapes;

    void propagate_shapes();  // throws ShapeError on inconsistency
    void validate() const;    // structural checks beyond shapes
};

// Default anchors in 13x13-grid cell units.
std::vector<Anchor> default_anchors();

// The full 31-layer detection network: 22 convolutions, 5 pools, a skip off
// the last 26x26 feature map through space-to-depth into the trunk, and a
// 1x1 head producing anchors*(5+classes) maps over a 13x13 grid.
NetworkSpec iyolo_spec(int num_classes = 3);

// Structurally identical reduced network on a 64x64 input and 4x4 grid, for
// fast training tests. Anchors are the defaults rescaled to the 4-cell grid.
NetworkSpec tiny_spec(int num_classes = 3);

template <typename T>
struct NetworkT {
    NetworkSpec spec;
    // Parameters for conv layers, indexed by position among conv layers
    // (params[i] belongs to the i-th Conv row in spec.layers).
    std::vector<ConvParamsT<T>> params;

    int conv_index_of_layer(int layer_index) const;  // -1 if not a conv
    std::size_t param_count() const;
};

using Network = NetworkT<float>;
using NetworkD = NetworkT<double>;

// Random initialization: weights uniform in +-sqrt(2/fan_in), biases and
// batch-norm beta zero, gamma one, running stats at identity.
template <typename T>
NetworkT<T> build(const NetworkSpec& spec, uint32_t seed);

template <typename T, typename U>
NetworkT<T> network_cast(const NetworkT<U>& net);

// Output of the detection layer (the raw head tensor).
template <typename T>
TensorT<T> forward(const NetworkT<T>& net, const TensorT<T>& image);

// Forward pass that keeps every layer output plus per-conv caches, enough to
// run backward without recomputation.
template <typename T>
struct ForwardTraceT {
    std::vector<TensorT<T>> outputs;       // one per layer
    std::vector<ConvCacheT<T>> conv_caches;  // one per conv layer
};

template <typename T>
ForwardTraceT<T> forward_trace(const NetworkT<T>& net, const TensorT<T>& image);

// Gradients mirror NetworkT::params element-for-element.
template <typename T>
struct ParamGradsT {
    std::vector<ConvGradsT<T>> conv;

    void accumulate(const ParamGradsT<T>& other);
    void scale(T factor);
};

template <typename T>
ParamGradsT<T> zero_grads(const NetworkT<T>& net);

// Backpropagates grad_output (shape of the head tensor) through the trace.
template <typename T>
ParamGradsT<T> backward(const NetworkT<T>& net, const TensorT<T>& image,
                        const ForwardTraceT<T>& trace, const TensorT<T>& grad_output);

// Contiguous trainable-parameter blocks, used by the SGD step and the
// finite-difference checker. Order is fixed: per conv layer, weights then
// bias or (gamma, beta). gradient_blocks yields matching blocks.
template <typename T>
struct ParamBlockT {
    std::vector<T>* values = nullptr;
    std::string name;  // e.g. "conv12.weights"
};

template <typename T>
std::vector<ParamBlockT<T>> parameter_blocks(NetworkT<T>& net);
template <typename T>
std::vector<const std::vector<T>*> gradient_blocks(const ParamGradsT<T>& grads);

std::size_t parameter_count(const NetworkSpec& spec);

}  // namespace iyolo
