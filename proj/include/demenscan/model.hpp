#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demenscan/kernels.hpp"
#include "demenscan/rng.hpp"
#include "demenscan/tensor.hpp"

namespace demenscan {

// Architecture description. Fixed roster: 4 conv blocks (3×3 kernels, stride
// 1, same padding, each followed by a 2×2 max pool), flatten, two hidden FC
// layers with ReLU, dropout, and a linear output layer producing one logit
// per class.
struct ModelSpec {
    size_t input_h = 128;
    size_t input_w = 128;
    size_t input_c = 3;
    std::vector<size_t> conv_filters = {32, 64, 128, 64};
    size_t kernel = 3;
    std::vector<size_t> fc_widths = {256, 128};
    double dropout_rate = 0.5;
    size_t num_classes = 4;

    void validate() const; // throws ParameterError on an inconsistent spec

    size_t blocks() const { return conv_filters.size(); }
    // Spatial edge length entering block i (0-based); i == blocks() gives the
    // final pooled size.
    size_t spatial_at(size_t block) const { return input_h >> block; }
    size_t flatten_dim() const {
        const size_t s = spatial_at(blocks());
        return s * s * conv_filters.back();
    }
    size_t param_count() const;

    bool operator==(const ModelSpec&) const = default;
};

// Canonical JSON round-trip (sorted keys, stable float formatting); used by
// checkpoints and config files.
std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

template <typename T>
struct LayerParamsT {
    TensorT<T> w, b;
};

// Learnable state: conv layers then dense layers (fc1, fc2, output), each
// weight-then-bias. This is also the declared checkpoint payload order.
template <typename T>
struct ParametersT {
    std::vector<LayerParamsT<T>> conv;
    std::vector<LayerParamsT<T>> dense;
};

using Parameters = ParametersT<float>;

struct NamedShape {
    std::string name;
    std::vector<size_t> shape;
};

// Tensor names and shapes in declared order, derived from the spec alone.
std::vector<NamedShape> parameter_shapes(const ModelSpec& spec);

template <typename T, typename Fn>
void for_each_tensor(ParametersT<T>& p, Fn&& fn) {
    for (auto& layer : p.conv) {
        fn(layer.w);
        fn(layer.b);
    }
    for (auto& layer : p.dense) {
        fn(layer.w);
        fn(layer.b);
    }
}

template <typename T, typename Fn>
void for_each_tensor(const ParametersT<T>& p, Fn&& fn) {
    for (const auto& layer : p.conv) {
        fn(layer.w);
        fn(layer.b);
    }
    for (const auto& layer : p.dense) {
        fn(layer.w);
        fn(layer.b);
    }
}

// Zero-initialized parameter set with the spec's shapes (gradient and Adam
// moment buffers).
template <typename T>
ParametersT<T> parameters_like(const ModelSpec& spec) {
    spec.validate();
    ParametersT<T> p;
    size_t c_in = spec.input_c;
    for (size_t f : spec.conv_filters) {
        p.conv.push_back({TensorT<T>({f, c_in, spec.kernel, spec.kernel}), TensorT<T>({f})});
        c_in = f;
    }
    size_t in_w = spec.flatten_dim();
    for (size_t w : spec.fc_widths) {
        p.dense.push_back({TensorT<T>({w, in_w}), TensorT<T>({w})});
        in_w = w;
    }
    p.dense.push_back({TensorT<T>({spec.num_classes, in_w}), TensorT<T>({spec.num_classes})});
    return p;
}

template <typename To, typename From>
ParametersT<To> convert_parameters(const ParametersT<From>& src) {
    ParametersT<To> dst;
    auto conv_tensor = [](const TensorT<From>& t) {
        TensorT<To> out(t.shape());
        for (size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
        return out;
    };
    for (const auto& l : src.conv) dst.conv.push_back({conv_tensor(l.w), conv_tensor(l.b)});
    for (const auto& l : src.dense) dst.dense.push_back({conv_tensor(l.w), conv_tensor(l.b)});
    return dst;
}

// He-uniform weights (uniform in ±sqrt(6/fan_in)), zero biases; rng consumed
// in declared tensor order so a seed pins the whole parameter set.
Parameters init_parameters(const ModelSpec& spec, SeededRng& rng);

// Everything the backward pass and the explainability module consume: the
// input, each block's post-ReLU pre-pool activation, pooling argmax routes,
// pooled outputs, FC activations, the dropout mask, and the logits.
template <typename T>
struct ForwardTraceT {
    TensorT<T> input;
    std::vector<TensorT<T>> conv_act;
    std::vector<std::vector<uint32_t>> pool_argmax;
    std::vector<TensorT<T>> pooled;
    TensorT<T> flat;
    TensorT<T> fc1_act, fc2_act;
    TensorT<T> dropout_mask;
    TensorT<T> dropped;
    TensorT<T> logits;
};

using ForwardTrace = ForwardTraceT<float>;

// Forward pass with an externally supplied dropout mask (all-ones for eval).
// The gradient-check tests use this to replay a recorded mask in 64-bit.
template <typename T>
ForwardTraceT<T> model_forward_masked(const ModelSpec& spec, const ParametersT<T>& params,
                                      const TensorT<T>& x, const TensorT<T>& dropout_mask) {
    if (x.shape() != std::vector<size_t>{spec.input_c, spec.input_h, spec.input_w}) {
        throw ShapeError("model_forward: input " + TensorT<T>::shape_string(x.shape()) +
                         " does not match spec input " +
                         TensorT<T>::shape_string({spec.input_c, spec.input_h, spec.input_w}));
    }
    ForwardTraceT<T> t;
    t.input = x;
    const TensorT<T>* cur = &t.input;
    for (size_t i = 0; i < spec.blocks(); ++i) {
        TensorT<T> act = relu(conv2d_forward(*cur, params.conv[i].w, params.conv[i].b));
        PoolResult<T> pool = maxpool2x2_forward(act);
        t.conv_act.push_back(std::move(act));
        t.pool_argmax.push_back(std::move(pool.argmax));
        t.pooled.push_back(std::move(pool.y));
        cur = &t.pooled.back();
    }
    t.flat = t.pooled.back().reshaped({spec.flatten_dim()});
    t.fc1_act = relu(dense_forward(t.flat, params.dense[0].w, params.dense[0].b));
    t.fc2_act = relu(dense_forward(t.fc1_act, params.dense[1].w, params.dense[1].b));
    detail::require_same_shape(t.fc2_act, dropout_mask, "dropout mask");
    t.dropout_mask = dropout_mask;
    t.dropped = mul(t.fc2_act, t.dropout_mask);
    t.logits = dense_forward(t.dropped, params.dense[2].w, params.dense[2].b);
    return t;
}

// conv→ReLU→pool ×4, flatten, FC→ReLU, FC→ReLU, dropout, dense→logits.
// Train mode samples a fresh dropout mask from `dropout_rng`.
template <typename T>
ForwardTraceT<T> model_forward(const ModelSpec& spec, const ParametersT<T>& params,
                               const TensorT<T>& x, RunMode mode,
                               SeededRng* dropout_rng = nullptr) {
    TensorT<T> mask = TensorT<T>::full({spec.fc_widths.back()}, T(1));
    if (mode == RunMode::Train && spec.dropout_rate > 0.0) {
        if (dropout_rng == nullptr) {
            throw ParameterError("model_forward: train mode requires a dropout rng");
        }
        const T keep_scale = static_cast<T>(1.0 / (1.0 - spec.dropout_rate));
        for (size_t i = 0; i < mask.size(); ++i) {
            mask[i] = dropout_rng->unit() < spec.dropout_rate ? T(0) : keep_scale;
        }
    }
    return model_forward_masked(spec, params, x, mask);
}

// Exact gradients of the logits w.r.t. every parameter and the input given
// an upstream gradient on the logits. Returned in a parameter-shaped
// container; the input gradient rides along for the saliency path.
template <typename T>
struct BackwardResultT {
    ParametersT<T> grads;
    TensorT<T> grad_input;
};

template <typename T>
BackwardResultT<T> model_backward(const ModelSpec& spec, const ParametersT<T>& params,
                                  const ForwardTraceT<T>& trace,
                                  const TensorT<T>& grad_logits) {
    if (grad_logits.size() != spec.num_classes) {
        throw ShapeError("model_backward: grad_logits length " +
                         std::to_string(grad_logits.size()) + " != num_classes " +
                         std::to_string(spec.num_classes));
    }
    BackwardResultT<T> out{parameters_like<T>(spec), TensorT<T>()};

    DenseGrads<T> d2 = dense_backward(trace.dropped, params.dense[2].w, grad_logits);
    out.grads.dense[2] = {std::move(d2.w), std::move(d2.b)};
    TensorT<T> g = mul(d2.x, trace.dropout_mask);
    g = relu_backward(trace.fc2_act, g);

    DenseGrads<T> d1 = dense_backward(trace.fc1_act, params.dense[1].w, g);
    out.grads.dense[1] = {std::move(d1.w), std::move(d1.b)};
    g = relu_backward(trace.fc1_act, d1.x);

    DenseGrads<T> d0 = dense_backward(trace.flat, params.dense[0].w, g);
    out.grads.dense[0] = {std::move(d0.w), std::move(d0.b)};

    TensorT<T> gsp = d0.x.reshaped(trace.pooled.back().shape());
    for (size_t i = spec.blocks(); i-- > 0;) {
        TensorT<T> gact =
            maxpool2x2_backward(trace.pool_argmax[i], gsp, trace.conv_act[i].shape());
        gact = relu_backward(trace.conv_act[i], gact);
        const TensorT<T>& conv_in = i == 0 ? trace.input : trace.pooled[i - 1];
        ConvGrads<T> cg = conv2d_backward(conv_in, params.conv[i].w, gact);
        out.grads.conv[i] = {std::move(cg.w), std::move(cg.b)};
        gsp = std::move(cg.x);
    }
    out.grad_input = std::move(gsp);
    return out;
}

} // namespace demenscan
