#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "demenscan/tensor.hpp"

namespace demenscan {

// 8-bit image, row-major H×W×C with C ∈ {1, 3}.
struct ImageU8 {
    size_t height = 0;
    size_t width = 0;
    size_t channels = 0;
    std::vector<uint8_t> pixels;
};

// Decodes a PNG or JPEG file (sniffed by signature). Grayscale stays
// single-channel; alpha is stripped.
ImageU8 read_image(const std::string& path);

void write_png_gray8(const std::string& path, size_t height, size_t width,
                     const std::vector<uint8_t>& pixels);
void write_png_rgb8(const std::string& path, size_t height, size_t width,
                    const std::vector<uint8_t>& pixels);
void write_jpeg_rgb8(const std::string& path, size_t height, size_t width,
                     const std::vector<uint8_t>& pixels, int quality = 90);

// Bilinear resampling with half-pixel-centered sample coordinates and edge
// clamping; input and output are H×W×C float tensors. Interpolation runs in
// double per pixel.
Tensor bilinear_resize_hwc(const Tensor& hwc, size_t out_h, size_t out_w);

Tensor hwc_to_chw(const Tensor& hwc);

// Full ingestion: decode, scale to [0,1], replicate grayscale to 3 channels,
// bilinearly resize off-size images, and permute to C×H×W.
Tensor decode_image(const std::string& path, size_t target_h = 128, size_t target_w = 128);

} // namespace demenscan
