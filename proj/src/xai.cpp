#include "demenscan/xai.hpp"

#include <cmath>

namespace demenscan {

namespace {

// The guided rule on top of a vanilla ReLU-backward tensor: keep positive
// entries, zero the rest.
Tensor positive_part(const Tensor& g) {
    Tensor out(g.shape());
    for (size_t i = 0; i < g.size(); ++i) out[i] = g[i] > 0.0f ? g[i] : 0.0f;
    return out;
}

Tensor guided_relu_site(const Tensor& activation, const Tensor& upstream, const char* site,
                        std::vector<ReluSiteRecord>* sites) {
    Tensor vanilla = relu_backward(activation, upstream);
    Tensor guided = positive_part(vanilla);
    if (sites) sites->push_back({site, vanilla, guided});
    return guided;
}

} // namespace

std::vector<uint8_t> render_grayscale(const Tensor& map) {
    float lo = map[0], hi = map[0];
    for (size_t i = 0; i < map.size(); ++i) {
        if (!std::isfinite(map[i])) {
            throw RenderError("render_grayscale: non-finite value at element " +
                              std::to_string(i));
        }
        lo = std::min(lo, map[i]);
        hi = std::max(hi, map[i]);
    }
    std::vector<uint8_t> out(map.size());
    if (hi == lo) {
        std::fill(out.begin(), out.end(), uint8_t{128});
        return out;
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    for (size_t i = 0; i < map.size(); ++i) {
        const double unit = (static_cast<double>(map[i]) - static_cast<double>(lo)) / range;
        out[i] = static_cast<uint8_t>(std::floor(unit * 255.0 + 0.5));
    }
    return out;
}

std::vector<FilterImage> visualize_filters(const ModelSpec& spec, const Parameters& params,
                                           size_t layer, size_t n) {
    if (layer < 1 || layer > params.conv.size()) {
        throw ParameterError("visualize_filters: layer " + std::to_string(layer) +
                             " is not a conv layer (1.." + std::to_string(params.conv.size()) +
                             ")");
    }
    const Tensor& w = params.conv[layer - 1].w;
    const size_t filters = w.extent(0), channels = w.extent(1);
    const size_t k = spec.kernel;
    if (n < 1 || n > filters) {
        throw ParameterError("visualize_filters: filter count " + std::to_string(n) +
                             " out of range (layer has " + std::to_string(filters) +
                             " filters)");
    }
    std::vector<FilterImage> images;
    for (size_t f = 0; f < n; ++f) {
        for (size_t c = 0; c < channels; ++c) {
            FilterImage img;
            img.layer = layer;
            img.filter = f;
            img.channel = c;
            img.plane = Tensor({k, k});
            const float* src = w.data() + (f * channels + c) * k * k;
            for (size_t i = 0; i < k * k; ++i) img.plane[i] = src[i];
            img.rendered = render_grayscale(img.plane);
            images.push_back(std::move(img));
        }
    }
    return images;
}

FeatureMapSet feature_maps(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                           size_t layer, size_t n) {
    if (layer < 1 || layer > spec.blocks()) {
        throw ParameterError("feature_maps: layer " + std::to_string(layer) +
                             " out of range 1.." + std::to_string(spec.blocks()));
    }
    if (n < 1 || n > spec.conv_filters[layer - 1]) {
        throw ParameterError("feature_maps: map count " + std::to_string(n) +
                             " out of range (layer has " +
                             std::to_string(spec.conv_filters[layer - 1]) + " filters)");
    }
    const ForwardTrace trace = model_forward(spec, params, x, RunMode::Eval);
    const Tensor& act = trace.conv_act[layer - 1];
    FeatureMapSet set;
    set.layer = layer;
    set.map_h = act.extent(1);
    set.map_w = act.extent(2);
    for (size_t f = 0; f < n; ++f) {
        Tensor map({set.map_h, set.map_w});
        const float* src = act.data() + f * set.map_h * set.map_w;
        for (size_t i = 0; i < map.size(); ++i) map[i] = src[i];
        set.rendered.push_back(render_grayscale(map));
        set.maps.push_back(std::move(map));
    }
    return set;
}

SaliencyMap guided_backprop(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                            int target_class, std::vector<ReluSiteRecord>* sites) {
    if (target_class < 0 || static_cast<size_t>(target_class) >= spec.num_classes) {
        throw ParameterError("guided_backprop: class " + std::to_string(target_class) +
                             " out of range for " + std::to_string(spec.num_classes) +
                             " classes");
    }
    const ForwardTrace trace = model_forward(spec, params, x, RunMode::Eval);

    Tensor seed({spec.num_classes});
    seed[static_cast<size_t>(target_class)] = 1.0f;

    Tensor g = dense_backward_input(params.dense[2].w, seed);
    g = mul(g, trace.dropout_mask);
    g = guided_relu_site(trace.fc2_act, g, "fc2", sites);
    g = dense_backward_input(params.dense[1].w, g);
    g = guided_relu_site(trace.fc1_act, g, "fc1", sites);
    g = dense_backward_input(params.dense[0].w, g);

    Tensor gsp = g.reshaped(trace.pooled.back().shape());
    static const char* kConvSites[4] = {"conv1", "conv2", "conv3", "conv4"};
    for (size_t i = spec.blocks(); i-- > 0;) {
        Tensor gact = maxpool2x2_backward(trace.pool_argmax[i], gsp, trace.conv_act[i].shape());
        gact = guided_relu_site(trace.conv_act[i], gact, kConvSites[i], sites);
        const Tensor& conv_in = i == 0 ? trace.input : trace.pooled[i - 1];
        gsp = conv2d_backward_input(params.conv[i].w, gact, conv_in.extent(0),
                                    conv_in.extent(1), conv_in.extent(2));
    }

    SaliencyMap sal;
    sal.target_class = target_class;
    sal.values = Tensor({spec.input_h, spec.input_w});
    const size_t hw = spec.input_h * spec.input_w;
    for (size_t p = 0; p < hw; ++p) {
        float best = 0.0f;
        for (size_t c = 0; c < spec.input_c; ++c) {
            best = std::max(best, std::fabs(gsp[c * hw + p]));
        }
        sal.values[p] = best;
    }
    sal.rendered = render_grayscale(sal.values);
    return sal;
}

GrayImage assemble_grid(const std::vector<std::vector<uint8_t>>& cells, size_t rows, size_t cols,
                        size_t cell_h, size_t cell_w, size_t upscale) {
    if (cells.size() != rows * cols || upscale == 0) {
        throw ParameterError("assemble_grid: cell count or upscale inconsistent with grid");
    }
    for (const auto& c : cells) {
        if (c.size() != cell_h * cell_w) {
            throw ParameterError("assemble_grid: cell size mismatch");
        }
    }
    const size_t gap = 1;
    const size_t ch = cell_h * upscale, cw = cell_w * upscale;
    GrayImage img;
    img.height = rows * ch + (rows - 1) * gap;
    img.width = cols * cw + (cols - 1) * gap;
    img.pixels.assign(img.height * img.width, uint8_t{255});
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
            const auto& cell = cells[r * cols + c];
            const size_t oy = r * (ch + gap), ox = c * (cw + gap);
            for (size_t i = 0; i < ch; ++i) {
                for (size_t j = 0; j < cw; ++j) {
                    img.pixels[(oy + i) * img.width + ox + j] =
                        cell[(i / upscale) * cell_w + (j / upscale)];
                }
            }
        }
    }
    return img;
}

} // namespace demenscan
