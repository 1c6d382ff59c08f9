#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "demenscan/model.hpp"
#include "demenscan/rng.hpp"
#include "demenscan/tensor.hpp"

namespace testutil {

using namespace demenscan;

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / ("demenscan_" + tag + "_XXXXXX");
        std::string tmpl = base.string();
        if (!mkdtemp(tmpl.data())) {
            throw std::runtime_error("mkdtemp failed for " + tmpl);
        }
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& rel = "") const {
        return rel.empty() ? path_.string() : (path_ / rel).string();
    }

private:
    std::filesystem::path path_;
};

inline Tensor random_tensor(SeededRng& rng, std::vector<size_t> shape, double lo = -1.0,
                            double hi = 1.0) {
    return rng_uniform<float>(rng, std::move(shape), lo, hi);
}

inline TensorT<double> to_double(const Tensor& t) {
    TensorT<double> out(t.shape());
    for (size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]);
    return out;
}

// ---- independent oracles ----

// Naive triple-loop matrix multiply (float accumulation, p ascending).
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c({m, n});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) {
                acc += static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
            }
            c[i * n + j] = static_cast<float>(acc);
        }
    }
    return c;
}

// Direct six-nested-loop cross-correlation with zero same-padding, stride 1.
// Written against the definition, independent of the im2col route.
template <typename T>
TensorT<T> naive_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    const size_t f_n = w.extent(0), c_n = w.extent(1), kh = w.extent(2), kw = w.extent(3);
    const size_t h = x.extent(1), ww = x.extent(2);
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    TensorT<T> out({f_n, h, ww});
    for (size_t f = 0; f < f_n; ++f) {
        for (size_t i = 0; i < h; ++i) {
            for (size_t j = 0; j < ww; ++j) {
                double acc = static_cast<double>(b[f]);
                for (size_t c = 0; c < c_n; ++c) {
                    for (size_t u = 0; u < kh; ++u) {
                        for (size_t v = 0; v < kw; ++v) {
                            const long si = static_cast<long>(i + u) - ph;
                            const long sj = static_cast<long>(j + v) - pw;
                            if (si < 0 || si >= static_cast<long>(h) || sj < 0 ||
                                sj >= static_cast<long>(ww)) {
                                continue;
                            }
                            acc += static_cast<double>(
                                       w[((f * c_n + c) * kh + u) * kw + v]) *
                                   static_cast<double>(
                                       x[(c * h + static_cast<size_t>(si)) * ww +
                                         static_cast<size_t>(sj)]);
                        }
                    }
                }
                out[(f * h + i) * ww + j] = static_cast<T>(acc);
            }
        }
    }
    return out;
}

// Central finite difference of a scalar function of one double parameter.
inline double central_difference(const std::function<double(double)>& f, double x0,
                                 double eps = 1e-3) {
    return (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps);
}

// Relative error with a magnitude floor so near-zero gradients compare on an
// absolute scale.
inline double grad_error(double analytic, double fd) {
    const double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-3});
    return std::fabs(analytic - fd) / denom;
}

// Reduced architecture used throughout the gradient and XAI tests.
inline ModelSpec reduced_spec() {
    ModelSpec s;
    s.input_h = s.input_w = 16;
    s.input_c = 3;
    s.conv_filters = {4, 4, 8, 4};
    s.fc_widths = {16, 8};
    s.dropout_rate = 0.5;
    s.num_classes = 4;
    return s;
}

// Desk-scale architecture for the corpus-level runs.
inline ModelSpec desk_spec() {
    ModelSpec s;
    s.input_h = s.input_w = 32;
    s.input_c = 3;
    s.conv_filters = {8, 16, 32, 16};
    s.fc_widths = {64, 32};
    s.dropout_rate = 0.5;
    s.num_classes = 4;
    return s;
}

} // namespace testutil
