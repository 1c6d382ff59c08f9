#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "demenscan/model.hpp"

namespace demenscan {

// Linear min-max map of a finite-valued map onto [0, 255] with round-half-up;
// a constant map renders as uniform mid-gray 128. RenderError on non-finite
// values.
std::vector<uint8_t> render_grayscale(const Tensor& map);

struct FilterImage {
    size_t layer = 1;   // 1-based conv layer
    size_t filter = 0;
    size_t channel = 0; // input channel of that layer
    Tensor plane;       // kernel × kernel weights
    std::vector<uint8_t> rendered;
};

// One rendered kernel plane per (filter, input channel) for the first n
// filters of a conv layer.
std::vector<FilterImage> visualize_filters(const ModelSpec& spec, const Parameters& params,
                                           size_t layer = 1, size_t n = 6);

struct FeatureMapSet {
    size_t layer = 1;
    size_t map_h = 0, map_w = 0;
    std::vector<Tensor> maps; // post-ReLU, pre-pool activation planes
    std::vector<std::vector<uint8_t>> rendered;
};

// Eval-mode forward; maps are taken straight from the forward trace.
FeatureMapSet feature_maps(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                           size_t layer, size_t n = 6);

struct SaliencyMap {
    int target_class = 0;
    Tensor values; // H×W, >= 0 (channel max of |input gradient|)
    std::vector<uint8_t> rendered;
};

// Captured at each ReLU site during the guided pass: the tensor a vanilla
// ReLU backward would propagate and the guided one actually propagated.
struct ReluSiteRecord {
    std::string site;
    Tensor vanilla;
    Tensor guided;
};

// Guided backpropagation from the target logit: at every ReLU site the
// backward signal passes only where the forward input was positive AND the
// incoming gradient is positive; max-pool routes via argmax; dropout is
// inactive (eval forward).
SaliencyMap guided_backprop(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                            int target_class, std::vector<ReluSiteRecord>* sites = nullptr);

struct GrayImage {
    size_t height = 0, width = 0;
    std::vector<uint8_t> pixels;
};

// Tiles rendered cells (all cell_h × cell_w) into a rows × cols grid with
// nearest-neighbor upscaling and a 1-px separator.
GrayImage assemble_grid(const std::vector<std::vector<uint8_t>>& cells, size_t rows, size_t cols,
                        size_t cell_h, size_t cell_w, size_t upscale);

} // namespace demenscan
