#include "demenscan/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

#include "demenscan/errors.hpp"

namespace demenscan {

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    longjmp(err->jump, 1);
}

ImageU8 read_jpeg(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw DecodeError("cannot open image: " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;

    ImageU8 img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(f);
        throw DecodeError("jpeg decode failed for " + path + ": " + err.message);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);

    img.height = cinfo.output_height;
    img.width = cinfo.output_width;
    img.channels = cinfo.output_components;
    if (img.channels != 1 && img.channels != 3) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(f);
        throw DecodeError("jpeg decode: unsupported channel count " +
                          std::to_string(img.channels) + " in " + path);
    }
    img.pixels.resize(img.height * img.width * img.channels);
    const size_t stride = img.width * img.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() + cinfo.output_scanline * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    return img;
}

ImageU8 read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw DecodeError("png decode failed for " + path + ": " + image.message);
    }
    ImageU8 img;
    img.height = image.height;
    img.width = image.width;
    // Let libpng collapse palettes and strip alpha; keep grayscale as-is.
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    img.channels = gray ? 1 : 3;
    img.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
        throw DecodeError("png decode failed for " + path + ": " + image.message);
    }
    return img;
}

void write_png(const std::string& path, size_t height, size_t width,
               const std::vector<uint8_t>& pixels, uint32_t format, size_t channels) {
    if (pixels.size() != height * width * channels) {
        throw ParameterError("png write: pixel buffer size does not match dimensions");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
        throw IoError("png write failed for " + path + ": " + image.message);
    }
}

} // namespace

ImageU8 read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DecodeError("cannot open image: " + path);
    unsigned char sig[8] = {0};
    probe.read(reinterpret_cast<char*>(sig), 8);
    const std::streamsize got = probe.gcount();
    probe.close();

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (got >= 8 && std::memcmp(sig, png_sig, 8) == 0) return read_png(path);
    if (got >= 3 && sig[0] == 0xff && sig[1] == 0xd8 && sig[2] == 0xff) return read_jpeg(path);
    throw DecodeError("unsupported image format (not PNG or JPEG): " + path);
}

void write_png_gray8(const std::string& path, size_t height, size_t width,
                     const std::vector<uint8_t>& pixels) {
    write_png(path, height, width, pixels, PNG_FORMAT_GRAY, 1);
}

void write_png_rgb8(const std::string& path, size_t height, size_t width,
                    const std::vector<uint8_t>& pixels) {
    write_png(path, height, width, pixels, PNG_FORMAT_RGB, 3);
}

void write_jpeg_rgb8(const std::string& path, size_t height, size_t width,
                     const std::vector<uint8_t>& pixels, int quality) {
    if (pixels.size() != height * width * 3) {
        throw ParameterError("jpeg write: pixel buffer size does not match dimensions");
    }
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);

    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::fclose(f);
        throw IoError("jpeg write failed for " + path + ": " + err.message);
    }

    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(width);
    cinfo.image_height = static_cast<JDIMENSION>(height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const size_t stride = width * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(pixels.data() + cinfo.next_scanline * stride);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::fclose(f);
}

Tensor bilinear_resize_hwc(const Tensor& hwc, size_t out_h, size_t out_w) {
    if (hwc.rank() != 3) {
        throw ShapeError("bilinear_resize: expected H×W×C input, got " +
                         Tensor::shape_string(hwc.shape()));
    }
    if (out_h == 0 || out_w == 0) {
        throw ParameterError("bilinear_resize: target extents must be positive");
    }
    const size_t in_h = hwc.extent(0), in_w = hwc.extent(1), c = hwc.extent(2);
    Tensor out({out_h, out_w, c});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    const float* src = hwc.data();
    float* dst = out.data();
    for (size_t i = 0; i < out_h; ++i) {
        const double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        const double y0f = std::floor(fy);
        const double dy = fy - y0f;
        const long y0 = std::clamp(static_cast<long>(y0f), 0L, static_cast<long>(in_h) - 1);
        const long y1 = std::clamp(static_cast<long>(y0f) + 1, 0L, static_cast<long>(in_h) - 1);
        for (size_t j = 0; j < out_w; ++j) {
            const double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            const double x0f = std::floor(fx);
            const double dx = fx - x0f;
            const long x0 = std::clamp(static_cast<long>(x0f), 0L, static_cast<long>(in_w) - 1);
            const long x1 = std::clamp(static_cast<long>(x0f) + 1, 0L, static_cast<long>(in_w) - 1);
            const float* p00 = src + (static_cast<size_t>(y0) * in_w + static_cast<size_t>(x0)) * c;
            const float* p01 = src + (static_cast<size_t>(y0) * in_w + static_cast<size_t>(x1)) * c;
            const float* p10 = src + (static_cast<size_t>(y1) * in_w + static_cast<size_t>(x0)) * c;
            const float* p11 = src + (static_cast<size_t>(y1) * in_w + static_cast<size_t>(x1)) * c;
            float* o = dst + (i * out_w + j) * c;
            for (size_t ch = 0; ch < c; ++ch) {
                const double top = (1.0 - dx) * p00[ch] + dx * p01[ch];
                const double bot = (1.0 - dx) * p10[ch] + dx * p11[ch];
                o[ch] = static_cast<float>((1.0 - dy) * top + dy * bot);
            }
        }
    }
    return out;
}

Tensor hwc_to_chw(const Tensor& hwc) {
    if (hwc.rank() != 3) {
        throw ShapeError("hwc_to_chw: expected H×W×C input, got " +
                         Tensor::shape_string(hwc.shape()));
    }
    const size_t h = hwc.extent(0), w = hwc.extent(1), c = hwc.extent(2);
    Tensor chw({c, h, w});
    for (size_t i = 0; i < h; ++i) {
        for (size_t j = 0; j < w; ++j) {
            const float* p = hwc.data() + (i * w + j) * c;
            for (size_t ch = 0; ch < c; ++ch) {
                chw[ch * h * w + i * w + j] = p[ch];
            }
        }
    }
    return chw;
}

Tensor decode_image(const std::string& path, size_t target_h, size_t target_w) {
    const ImageU8 img = read_image(path);
    Tensor hwc({img.height, img.width, 3});
    const size_t n = img.height * img.width;
    if (img.channels == 1) {
        for (size_t i = 0; i < n; ++i) {
            const float v = static_cast<float>(img.pixels[i]) / 255.0f;
            hwc[i * 3 + 0] = v;
            hwc[i * 3 + 1] = v;
            hwc[i * 3 + 2] = v;
        }
    } else {
        for (size_t i = 0; i < n * 3; ++i) {
            hwc[i] = static_cast<float>(img.pixels[i]) / 255.0f;
        }
    }
    if (img.height != target_h || img.width != target_w) {
        hwc = bilinear_resize_hwc(hwc, target_h, target_w);
    }
    return hwc_to_chw(hwc);
}

} // namespace demenscan
