#include "iyolo/network.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "iyolo/errors.hpp"

namespace iyolo {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "convolutional";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Route: return "route";
        case LayerKind::Reorg: return "reorg";
        case LayerKind::Detection: return "detection";
    }
    return "?";
}

int NetworkSpec::grid_cells() const {
    if (output_shapes.size() != layers.size()) {
        throw ValidationError("grid_cells needs propagated shapes");
    }
    return output_shapes.back().height;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw ValidationError("network has no layers");
    if (anchors.empty()) throw ValidationError("network needs at least one anchor");
    if (num_classes < 1) throw ValidationError("network needs at least one class");
    if (input_channels < 1 || input_size < 1) {
        throw ValidationError("bad input shape");
    }
    const LayerSpec* last_conv = nullptr;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i);
        if (l.index != static_cast<int>(i)) {
            throw ValidationError(where + ": index " + std::to_string(l.index) +
                                  " breaks the contiguous numbering");
        }
        switch (l.kind) {
            case LayerKind::Conv:
                if (l.filters < 1) throw ValidationError(where + ": conv needs filters >= 1");
                if (l.kernel != 1 && l.kernel != 3) {
                    throw ValidationError(where + ": conv kernel must be 1 or 3");
                }
                last_conv = &l;
                break;
            case LayerKind::Route:
                if (l.route_sources.empty()) {
                    throw ValidationError(where + ": route needs at least one source");
                }
                for (int s : l.route_sources) {
                    if (s < 0 || s >= static_cast<int>(i)) {
                        throw ValidationError(where + ": route source " + std::to_string(s) +
                                              " must reference an earlier layer");
                    }
                }
                break;
            case LayerKind::Reorg:
                if (l.reorg_stride < 2) {
                    throw ValidationError(where + ": reorg stride must be >= 2");
                }
                break;
            case LayerKind::MaxPool:
                break;
            case LayerKind::Detection:
                if (i + 1 != layers.size()) {
                    throw ValidationError(where + ": detection must be the last layer");
                }
                break;
        }
    }
    if (layers.back().kind != LayerKind::Detection) {
        throw ValidationError("last layer must be a detection layer");
    }
    if (!last_conv) throw ValidationError("network has no convolutions");
    if (last_conv->filters != detection_channels()) {
        throw ValidationError("head conv produces " + std::to_string(last_conv->filters) +
                              " maps but the detection layer wants " +
                              std::to_string(detection_channels()));
    }
}

void NetworkSpec::propagate_shapes() {
    validate();
    output_shapes.assign(layers.size(), Shape{});
    Shape in{input_channels, input_size, input_size};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i);
        Shape out;
        switch (l.kind) {
            case LayerKind::Conv:
                out = Shape{l.filters, in.height, in.width};
                break;
            case LayerKind::MaxPool:
                if (in.height % 2 != 0 || in.width % 2 != 0) {
                    throw ShapeError(where + ": maxpool input " + std::to_string(in.height) +
                                     "x" + std::to_string(in.width) + " is not even");
                }
                out = Shape{in.channels, in.height / 2, in.width / 2};
                break;
            case LayerKind::Route: {
                out = output_shapes[l.route_sources[0]];
                for (std::size_t s = 1; s < l.route_sources.size(); ++s) {
                    const Shape& add = output_shapes[l.route_sources[s]];
                    if (add.height != out.height || add.width != out.width) {
                        throw ShapeError(where + ": route sources disagree spatially");
                    }
                    out.channels += add.channels;
                }
                break;
            }
            case LayerKind::Reorg: {
                const int s = l.reorg_stride;
                if (in.height % s != 0 || in.width % s != 0) {
                    throw ShapeError(where + ": reorg stride does not divide input");
                }
                out = Shape{in.channels * s * s, in.height / s, in.width / s};
                break;
            }
            case LayerKind::Detection:
                out = in;
                break;
        }
        output_shapes[i] = out;
        in = out;
    }
}

std::vector<Anchor> default_anchors() {
    return {{1.08f, 1.19f}, {3.42f, 4.41f}, {6.63f, 11.38f}, {9.42f, 5.11f}, {16.62f, 10.52f}};
}

namespace {

LayerSpec conv_layer(int index, int filters, int kernel) {
    LayerSpec l;
    l.index = index;
    l.kind = LayerKind::Conv;
    l.filters = filters;
    l.kernel = kernel;
    l.batch_norm = true;
    l.activation = Activation::Leaky;
    return l;
}

LayerSpec head_layer(int index, int filters) {
    LayerSpec l = conv_layer(index, filters, 1);
    l.batch_norm = false;
    l.activation = Activation::Linear;
    return l;
}

LayerSpec pool_layer(int index) {
    LayerSpec l;
    l.index = index;
    l.kind = LayerKind::MaxPool;
    return l;
}

LayerSpec route_layer(int index, std::vector<int> sources) {
    LayerSpec l;
    l.index = index;
    l.kind = LayerKind::Route;
    l.route_sources = std::move(sources);
    return l;
}

LayerSpec reorg_layer(int index) {
    LayerSpec l;
    l.index = index;
    l.kind = LayerKind::Reorg;
    l.reorg_stride = 2;
    return l;
}

LayerSpec detection_layer(int index) {
    LayerSpec l;
    l.index = index;
    l.kind = LayerKind::Detection;
    return l;
}

}  // namespace

NetworkSpec iyolo_spec(int num_classes) {
    NetworkSpec spec;
    spec.input_channels = 3;
    spec.input_size = 416;
    spec.anchors = default_anchors();
    spec.num_classes = num_classes;
    const int head = static_cast<int>(spec.anchors.size()) * (5 + num_classes);
    spec.layers = {
        conv_layer(0, 32, 3),    //  -> 32x416x416
        pool_layer(1),           //  -> 32x208x208
        conv_layer(2, 64, 3),    //  -> 64x208x208
        pool_layer(3),           //  -> 64x104x104
        conv_layer(4, 128, 3),   //  -> 128x104x104
        conv_layer(5, 64, 1),    //  -> 64x104x104
        conv_layer(6, 128, 3),   //  -> 128x104x104
        pool_layer(7),           //  -> 128x52x52
        conv_layer(8, 256, 3),   //  -> 256x52x52
        conv_layer(9, 128, 1),   //  -> 128x52x52
        conv_layer(10, 256, 3),  //  -> 256x52x52
        pool_layer(11),          //  -> 256x26x26
        conv_layer(12, 512, 3),  //  -> 512x26x26
        conv_layer(13, 256, 1),  //  -> 256x26x26
        conv_layer(14, 512, 3),  //  -> 512x26x26
        conv_layer(15, 256, 1),  //  -> 256x26x26
        conv_layer(16, 512, 3),  //  -> 512x26x26, skip source
        pool_layer(17),          //  -> 512x13x13
        conv_layer(18, 1024, 3),
        conv_layer(19, 512, 1),
        conv_layer(20, 1024, 3),
        conv_layer(21, 512, 1),
        conv_layer(22, 1024, 3),
        conv_layer(23, 1024, 3),
        conv_layer(24, 1024, 3),        //  -> 1024x13x13, trunk
        route_layer(25, {16}),          //  -> 512x26x26
        reorg_layer(26),                //  -> 2048x13x13
        route_layer(27, {26, 24}),      //  -> 3072x13x13
        conv_layer(28, 1024, 3),        //  -> 1024x13x13
        head_layer(29, head),           //  -> headx13x13
        detection_layer(30),
    };
    spec.propagate_shapes();
    return spec;
}

NetworkSpec tiny_spec(int num_classes) {
    NetworkSpec spec;
    spec.input_channels = 3;
    spec.input_size = 64;
    spec.num_classes = num_classes;
    // Same priors, rescaled from the 13-cell grid to the 4-cell grid.
    for (const Anchor& a : default_anchors()) {
        spec.anchors.push_back(Anchor{a.w * 4.0f / 13.0f, a.h * 4.0f / 13.0f});
    }
    const int head = static_cast<int>(spec.anchors.size()) * (5 + num_classes);
    spec.layers = {
        conv_layer(0, 4, 3),    //  -> 4x64x64
        pool_layer(1),          //  -> 4x32x32
        conv_layer(2, 8, 3),    //  -> 8x32x32
        pool_layer(3),          //  -> 8x16x16
        conv_layer(4, 16, 3),   //  -> 16x16x16
        conv_layer(5, 8, 1),    //  -> 8x16x16
        conv_layer(6, 16, 3),   //  -> 16x16x16
        pool_layer(7),          //  -> 16x8x8
        conv_layer(8, 32, 3),   //  -> 32x8x8
        conv_layer(9, 16, 1),   //  -> 16x8x8
        conv_layer(10, 32, 3),  //  -> 32x8x8, skip source
        pool_layer(11),         //  -> 32x4x4
        conv_layer(12, 64, 3),  //  -> 64x4x4
        conv_layer(13, 64, 3),  //  -> 64x4x4, trunk
        route_layer(14, {10}),  //  -> 32x8x8
        reorg_layer(15),        //  -> 128x4x4
        route_layer(16, {15, 13}),  //  -> 192x4x4
        conv_layer(17, 64, 3),      //  -> 64x4x4
        head_layer(18, head),       //  -> headx4x4
        detection_layer(19),
    };
    spec.propagate_shapes();
    return spec;
}

namespace {

// Input channel count seen by layer i under the route/reorg graph.
template <typename TShape>
int layer_input_channels(const NetworkSpec& spec, std::size_t i, const TShape& shapes) {
    if (i == 0) return spec.input_channels;
    return shapes[i - 1].channels;
}

}  // namespace

template <typename T>
int NetworkT<T>::conv_index_of_layer(int layer_index) const {
    int ci = 0;
    for (const LayerSpec& l : spec.layers) {
        if (l.index == layer_index) {
            return l.kind == LayerKind::Conv ? ci : -1;
        }
        if (l.kind == LayerKind::Conv) ++ci;
    }
    return -1;
}

template <typename T>
std::size_t NetworkT<T>::param_count() const {
    return parameter_count(spec);
}

std::size_t parameter_count(const NetworkSpec& spec) {
    if (spec.output_shapes.size() != spec.layers.size()) {
        throw ValidationError("parameter_count needs propagated shapes");
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind != LayerKind::Conv) continue;
        const std::size_t in_c = layer_input_channels(spec, i, spec.output_shapes);
        total += static_cast<std::size_t>(l.filters) * in_c * l.kernel * l.kernel;
        total += static_cast<std::size_t>(l.filters) * (l.batch_norm ? 2 : 1);
    }
    return total;
}

template <typename T>
NetworkT<T> build(const NetworkSpec& spec, uint32_t seed) {
    NetworkT<T> net;
    net.spec = spec;
    if (net.spec.output_shapes.size() != net.spec.layers.size()) {
        net.spec.propagate_shapes();
    } else {
        net.spec.validate();
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        const LayerSpec& l = net.spec.layers[i];
        if (l.kind != LayerKind::Conv) continue;
        ConvParamsT<T> p;
        p.out_channels = l.filters;
        p.in_channels = layer_input_channels(net.spec, i, net.spec.output_shapes);
        p.kernel = l.kernel;
        p.activation = l.activation;
        p.has_bn = l.batch_norm;
        const double bound = std::sqrt(2.0 / (p.in_channels * l.kernel * l.kernel));
        p.weights.resize(p.weight_count());
        for (T& w : p.weights) w = static_cast<T>(rng.uniform(-bound, bound));
        if (p.has_bn) {
            p.gamma.assign(p.out_channels, T(1));
            p.beta.assign(p.out_channels, T(0));
            p.running_mean.assign(p.out_channels, T(0));
            p.running_var.assign(p.out_channels, T(1));
        } else {
            p.bias.assign(p.out_channels, T(0));
        }
        p.validate();
        net.params.push_back(std::move(p));
    }
    return net;
}

template <typename T, typename U>
NetworkT<T> network_cast(const NetworkT<U>& net) {
    NetworkT<T> out;
    out.spec = net.spec;
    out.params.reserve(net.params.size());
    for (const ConvParamsT<U>& p : net.params) {
        ConvParamsT<T> q;
        q.out_channels = p.out_channels;
        q.in_channels = p.in_channels;
        q.kernel = p.kernel;
        q.activation = p.activation;
        q.has_bn = p.has_bn;
        q.bn_epsilon = static_cast<T>(p.bn_epsilon);
        auto cast_vec = [](const std::vector<U>& src, std::vector<T>& dst) {
            dst.resize(src.size());
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
        };
        cast_vec(p.weights, q.weights);
        cast_vec(p.bias, q.bias);
        cast_vec(p.gamma, q.gamma);
        cast_vec(p.beta, q.beta);
        cast_vec(p.running_mean, q.running_mean);
        cast_vec(p.running_var, q.running_var);
        out.params.push_back(std::move(q));
    }
    return out;
}

namespace {

template <typename T>
void check_image(const NetworkT<T>& net, const TensorT<T>& image) {
    if (image.channels != net.spec.input_channels || image.height != net.spec.input_size ||
        image.width != net.spec.input_size) {
        throw ShapeError("network expects " + std::to_string(net.spec.input_channels) + "x" +
                         std::to_string(net.spec.input_size) + "x" +
                         std::to_string(net.spec.input_size) + " input, got " +
                         image.shape_str());
    }
}

template <typename T>
ForwardTraceT<T> run_forward(const NetworkT<T>& net, const TensorT<T>& image, bool keep_caches) {
    check_image(net, image);
    ForwardTraceT<T> trace;
    trace.outputs.reserve(net.spec.layers.size());
    int ci = 0;
    const TensorT<T>* in = &image;
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        const LayerSpec& l = net.spec.layers[i];
        TensorT<T> out;
        switch (l.kind) {
            case LayerKind::Conv: {
                ConvCacheT<T>* cache = nullptr;
                if (keep_caches) {
                    trace.conv_caches.emplace_back();
                    cache = &trace.conv_caches.back();
                }
                out = conv2d(*in, net.params[ci], cache);
                ++ci;
                break;
            }
            case LayerKind::MaxPool:
                out = maxpool2(*in);
                break;
            case LayerKind::Route: {
                out = trace.outputs[l.route_sources[0]];
                for (std::size_t s = 1; s < l.route_sources.size(); ++s) {
                    out = concat_channels(out, trace.outputs[l.route_sources[s]]);
                }
                break;
            }
            case LayerKind::Reorg:
                out = reorg(*in, l.reorg_stride);
                break;
            case LayerKind::Detection:
                out = *in;
                break;
        }
        trace.outputs.push_back(std::move(out));
        in = &trace.outputs.back();
    }
    return trace;
}

}  // namespace

template <typename T>
TensorT<T> forward(const NetworkT<T>& net, const TensorT<T>& image) {
    ForwardTraceT<T> trace = run_forward(net, image, false);
    return std::move(trace.outputs.back());
}

template <typename T>
ForwardTraceT<T> forward_trace(const NetworkT<T>& net, const TensorT<T>& image) {
    return run_forward(net, image, true);
}

template <typename T>
ParamGradsT<T> zero_grads(const NetworkT<T>& net) {
    ParamGradsT<T> g;
    g.conv.reserve(net.params.size());
    for (const ConvParamsT<T>& p : net.params) {
        ConvGradsT<T> cg;
        cg.weights.assign(p.weight_count(), T(0));
        if (p.has_bn) {
            cg.gamma.assign(p.out_channels, T(0));
            cg.beta.assign(p.out_channels, T(0));
        } else {
            cg.bias.assign(p.out_channels, T(0));
        }
        g.conv.push_back(std::move(cg));
    }
    return g;
}

namespace {

template <typename T>
void add_vec(std::vector<T>& dst, const std::vector<T>& src) {
    if (dst.size() != src.size()) throw ShapeError("gradient accumulation size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
void ParamGradsT<T>::accumulate(const ParamGradsT<T>& other) {
    if (conv.size() != other.conv.size()) {
        throw ShapeError("gradient accumulation layer count mismatch");
    }
    for (std::size_t i = 0; i < conv.size(); ++i) {
        add_vec(conv[i].weights, other.conv[i].weights);
        add_vec(conv[i].bias, other.conv[i].bias);
        add_vec(conv[i].gamma, other.conv[i].gamma);
        add_vec(conv[i].beta, other.conv[i].beta);
    }
}

template <typename T>
void ParamGradsT<T>::scale(T factor) {
    for (ConvGradsT<T>& g : conv) {
        for (T& v : g.weights) v *= factor;
        for (T& v : g.bias) v *= factor;
        for (T& v : g.gamma) v *= factor;
        for (T& v : g.beta) v *= factor;
    }
}

template <typename T>
ParamGradsT<T> backward(const NetworkT<T>& net, const TensorT<T>& image,
                        const ForwardTraceT<T>& trace, const TensorT<T>& grad_output) {
    check_image(net, image);
    const std::size_t n = net.spec.layers.size();
    if (trace.outputs.size() != n) {
        throw ShapeError("trace does not match the network");
    }
    if (!grad_output.same_shape(trace.outputs.back())) {
        throw ShapeError("output gradient shape " + grad_output.shape_str() +
                         " does not match head " + trace.outputs.back().shape_str());
    }
    ParamGradsT<T> grads = zero_grads(net);

    // Per-layer output gradients, accumulated as consumers are processed.
    std::vector<TensorT<T>> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const NetworkSpec::Shape& s = net.spec.output_shapes[i];
        g[i] = TensorT<T>(s.channels, s.height, s.width);
    }
    for (std::size_t i = 0; i < grad_output.data.size(); ++i) {
        g[n - 1].data[i] = grad_output.data[i];
    }

    auto add_into = [](TensorT<T>& dst, const TensorT<T>& src) {
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
    };

    int ci = static_cast<int>(net.params.size());
    for (std::size_t ri = n; ri-- > 0;) {
        const LayerSpec& l = net.spec.layers[ri];
        const TensorT<T>* in = ri == 0 ? &image : &trace.outputs[ri - 1];
        switch (l.kind) {
            case LayerKind::Conv: {
                --ci;
                ConvGradsT<T> cg =
                    conv2d_backward(g[ri], *in, net.params[ci], trace.conv_caches[ci]);
                add_vec(grads.conv[ci].weights, cg.weights);
                if (net.params[ci].has_bn) {
                    add_vec(grads.conv[ci].gamma, cg.gamma);
                    add_vec(grads.conv[ci].beta, cg.beta);
                } else {
                    add_vec(grads.conv[ci].bias, cg.bias);
                }
                if (ri > 0) add_into(g[ri - 1], cg.input);
                break;
            }
            case LayerKind::MaxPool:
                if (ri > 0) add_into(g[ri - 1], maxpool2_backward(g[ri], *in));
                break;
            case LayerKind::Route: {
                if (l.route_sources.size() == 1) {
                    add_into(g[l.route_sources[0]], g[ri]);
                } else {
                    // Split at each source's channel count, left to right.
                    TensorT<T> rest = g[ri];
                    for (std::size_t s = 0; s + 1 < l.route_sources.size(); ++s) {
                        const int c_a = net.spec.output_shapes[l.route_sources[s]].channels;
                        auto parts = split_channels(rest, c_a);
                        add_into(g[l.route_sources[s]], parts.first);
                        rest = std::move(parts.second);
                    }
                    add_into(g[l.route_sources.back()], rest);
                }
                break;
            }
            case LayerKind::Reorg:
                if (ri > 0) add_into(g[ri - 1], reorg_inverse(g[ri], l.reorg_stride));
                break;
            case LayerKind::Detection:
                if (ri > 0) add_into(g[ri - 1], g[ri]);
                break;
        }
    }
    return grads;
}

template <typename T>
std::vector<ParamBlockT<T>> parameter_blocks(NetworkT<T>& net) {
    std::vector<ParamBlockT<T>> blocks;
    int ci = 0;
    for (const LayerSpec& l : net.spec.layers) {
        if (l.kind != LayerKind::Conv) continue;
        ConvParamsT<T>& p = net.params[ci];
        const std::string base = "layer" + std::to_string(l.index);
        blocks.push_back({&p.weights, base + ".weights"});
        if (p.has_bn) {
            blocks.push_back({&p.gamma, base + ".gamma"});
            blocks.push_back({&p.beta, base + ".beta"});
        } else {
            blocks.push_back({&p.bias, base + ".bias"});
        }
        ++ci;
    }
    return blocks;
}

template <typename T>
std::vector<const std::vector<T>*> gradient_blocks(const ParamGradsT<T>& grads) {
    std::vector<const std::vector<T>*> blocks;
    for (const ConvGradsT<T>& g : grads.conv) {
        blocks.push_back(&g.weights);
        if (!g.gamma.empty()) {
            blocks.push_back(&g.gamma);
            blocks.push_back(&g.beta);
        } else {
            blocks.push_back(&g.bias);
        }
    }
    return blocks;
}

template struct NetworkT<float>;
template struct NetworkT<double>;
template struct ParamGradsT<float>;
template struct ParamGradsT<double>;

template Network build<float>(const NetworkSpec&, uint32_t);
template NetworkD build<double>(const NetworkSpec&, uint32_t);
template Network network_cast<float, double>(const NetworkD&);
template NetworkD network_cast<double, float>(const Network&);
template Tensor forward<float>(const Network&, const Tensor&);
template TensorD forward<double>(const NetworkD&, const TensorD&);
template ForwardTraceT<float> forward_trace<float>(const Network&, const Tensor&);
template ForwardTraceT<double> forward_trace<double>(const NetworkD&, const TensorD&);
template ParamGradsT<float> zero_grads<float>(const Network&);
template ParamGradsT<double> zero_grads<double>(const NetworkD&);
template ParamGradsT<float> backward<float>(const Network&, const Tensor&,
                                            const ForwardTraceT<float>&, const Tensor&);
template ParamGradsT<double> backward<double>(const NetworkD&, const TensorD&,
                                              const ForwardTraceT<double>&, const TensorD&);
template std::vector<ParamBlockT<float>> parameter_blocks<float>(Network&);
template std::vector<ParamBlockT<double>> parameter_blocks<double>(NetworkD&);
template std::vector<const std::vector<float>*> gradient_blocks<float>(
    const ParamGradsT<float>&);
template std::vector<const std::vector<double>*> gradient_blocks<double>(
    const ParamGradsT<double>&);

}  // namespace iyolo
