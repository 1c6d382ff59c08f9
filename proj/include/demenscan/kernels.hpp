#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "demenscan/rng.hpp"
#include "demenscan/tensor.hpp"

// Layer kernels on C×H×W tensors. Stride is always 1 and padding always
// "same" (odd kernels), which is all the model architecture uses. Templated
// over the scalar type: the library instantiates float, the gradient-check
// tests instantiate double.

namespace demenscan {

enum class RunMode { Train, Eval };

// Unrolls 3×3 (or any odd k) patches around every output pixel into a
// (C*kh*kw) × (H*W) matrix, zero-padded at the borders. Row order is (c, u, v)
// ascending so the matmul accumulates in the same order as a direct loop.
template <typename T>
TensorT<T> im2col(const TensorT<T>& x, size_t kh, size_t kw) {
    if (x.rank() != 3) {
        throw ShapeError("im2col: expected C×H×W input, got " +
                         TensorT<T>::shape_string(x.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ParameterError("im2col: kernel extents must be odd for same-padding");
    }
    const size_t c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    TensorT<T> cols({c_in * kh * kw, h * w});
    T* out = cols.data();
    const T* in = x.data();
    size_t row = 0;
    for (size_t c = 0; c < c_in; ++c) {
        const T* plane = in + c * h * w;
        for (size_t u = 0; u < kh; ++u) {
            for (size_t v = 0; v < kw; ++v, ++row) {
                T* dst = out + row * (h * w);
                const long di = static_cast<long>(u) - ph;
                const long dj = static_cast<long>(v) - pw;
                for (size_t i = 0; i < h; ++i) {
                    const long si = static_cast<long>(i) + di;
                    if (si < 0 || si >= static_cast<long>(h)) {
                        for (size_t j = 0; j < w; ++j) dst[i * w + j] = T(0);
                        continue;
                    }
                    const T* srow = plane + static_cast<size_t>(si) * w;
                    for (size_t j = 0; j < w; ++j) {
                        const long sj = static_cast<long>(j) + dj;
                        dst[i * w + j] = (sj < 0 || sj >= static_cast<long>(w))
                                             ? T(0)
                                             : srow[static_cast<size_t>(sj)];
                    }
                }
            }
        }
    }
    return cols;
}

// Scatter-add inverse of im2col.
template <typename T>
TensorT<T> col2im(const TensorT<T>& cols, size_t c_in, size_t h, size_t w,
                  size_t kh, size_t kw) {
    TensorT<T> x({c_in, h, w});
    T* out = x.data();
    const T* in = cols.data();
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    size_t row = 0;
    for (size_t c = 0; c < c_in; ++c) {
        T* plane = out + c * h * w;
        for (size_t u = 0; u < kh; ++u) {
            for (size_t v = 0; v < kw; ++v, ++row) {
                const T* src = in + row * (h * w);
                const long di = static_cast<long>(u) - ph;
                const long dj = static_cast<long>(v) - pw;
                for (size_t i = 0; i < h; ++i) {
                    const long si = static_cast<long>(i) + di;
                    if (si < 0 || si >= static_cast<long>(h)) continue;
                    T* drow = plane + static_cast<size_t>(si) * w;
                    for (size_t j = 0; j < w; ++j) {
                        const long sj = static_cast<long>(j) + dj;
                        if (sj < 0 || sj >= static_cast<long>(w)) continue;
                        drow[static_cast<size_t>(sj)] += src[i * w + j];
                    }
                }
            }
        }
    }
    return x;
}

// Cross-correlation with zero same-padding, stride 1, via im2col + matmul.
// x: C×H×W, w: F×C×kh×kw, b: F  →  F×H×W.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (w.rank() != 4) {
        throw ShapeError("conv2d: weights must be F×C×kh×kw, got " +
                         TensorT<T>::shape_string(w.shape()));
    }
    if (x.rank() != 3 || x.extent(0) != w.extent(1)) {
        throw ShapeError("conv2d: input channels " + TensorT<T>::shape_string(x.shape()) +
                         " do not match weights " + TensorT<T>::shape_string(w.shape()));
    }
    const size_t f = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (b.size() != f) {
        throw ShapeError("conv2d: bias length " + std::to_string(b.size()) +
                         " != filter count " + std::to_string(f));
    }
    const size_t h = x.extent(1), ww = x.extent(2);
    const TensorT<T> cols = im2col(x, kh, kw);
    const TensorT<T> wmat = w.reshaped({f, w.size() / f});
    TensorT<T> out = matmul(wmat, cols); // f × (h*w)
    for (size_t fi = 0; fi < f; ++fi) {
        T* row = out.data() + fi * h * ww;
        const T beta = b[fi];
        for (size_t i = 0; i < h * ww; ++i) row[i] += beta;
    }
    return out.reshaped({f, h, ww});
}

template <typename T>
struct ConvGrads {
    TensorT<T> x, w, b;
};

// Exact gradients of conv2d_forward. upstream: F×H×W.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w,
                             const TensorT<T>& upstream) {
    const size_t f = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const size_t c_in = x.extent(0), h = x.extent(1), ww = x.extent(2);
    if (upstream.shape() != std::vector<size_t>{f, h, ww}) {
        throw ShapeError("conv2d_backward: upstream " +
                         TensorT<T>::shape_string(upstream.shape()) +
                         " does not match forward output");
    }
    ConvGrads<T> g{TensorT<T>({c_in, h, ww}), TensorT<T>(w.shape()), TensorT<T>({f})};

    // grad_b[f] = sum over spatial positions.
    for (size_t fi = 0; fi < f; ++fi) {
        double acc = 0.0;
        const T* row = upstream.data() + fi * h * ww;
        for (size_t i = 0; i < h * ww; ++i) acc += static_cast<double>(row[i]);
        g.b[fi] = static_cast<T>(acc);
    }

    const TensorT<T> cols = im2col(x, kh, kw);              // (C*kh*kw) × (HW)
    const TensorT<T> upmat = upstream.reshaped({f, h * ww}); // F × (HW)

    // grad_w = upstream · colsᵀ
    {
        const size_t k = h * ww, n = c_in * kh * kw;
        std::vector<double> acc(f * n, 0.0);
        for (size_t fi = 0; fi < f; ++fi) {
            const T* urow = upmat.data() + fi * k;
            double* arow = acc.data() + fi * n;
            for (size_t p = 0; p < k; ++p) {
                const double u = static_cast<double>(urow[p]);
                if (u == 0.0) continue;
                for (size_t j = 0; j < n; ++j) {
                    arow[j] += u * static_cast<double>(cols[j * k + p]);
                }
            }
        }
        for (size_t i = 0; i < f * n; ++i) g.w[i] = static_cast<T>(acc[i]);
    }

    // grad_x = col2im(wᵀ · upstream)
    {
        const size_t rows = c_in * kh * kw;
        TensorT<T> wt({rows, f});
        const TensorT<T> wmat = w.reshaped({f, rows});
        for (size_t fi = 0; fi < f; ++fi) {
            for (size_t j = 0; j < rows; ++j) wt[j * f + fi] = wmat[fi * rows + j];
        }
        const TensorT<T> gcols = matmul(wt, upmat);
        g.x = col2im(gcols, c_in, h, ww, kh, kw);
    }
    return g;
}

// Input gradient alone (the saliency path never needs parameter gradients).
template <typename T>
TensorT<T> conv2d_backward_input(const TensorT<T>& w, const TensorT<T>& upstream,
                                 size_t c_in, size_t h, size_t ww) {
    const size_t f = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (upstream.shape() != std::vector<size_t>{f, h, ww}) {
        throw ShapeError("conv2d_backward_input: upstream " +
                         TensorT<T>::shape_string(upstream.shape()) +
                         " does not match forward output");
    }
    const size_t rows = c_in * kh * kw;
    TensorT<T> wt({rows, f});
    const TensorT<T> wmat = w.reshaped({f, rows});
    for (size_t fi = 0; fi < f; ++fi) {
        for (size_t j = 0; j < rows; ++j) wt[j * f + fi] = wmat[fi * rows + j];
    }
    const TensorT<T> gcols = matmul(wt, upstream.reshaped({f, h * ww}));
    return col2im(gcols, c_in, h, ww, kh, kw);
}

template <typename T>
struct PoolResult {
    TensorT<T> y;
    std::vector<uint32_t> argmax; // flat index into the input, one per output cell
};

// 2×2 max pool, stride 2. Ties break to the first element in row-major
// window order (strict > while scanning).
template <typename T>
PoolResult<T> maxpool2x2_forward(const TensorT<T>& x) {
    if (x.rank() != 3 || x.extent(1) % 2 != 0 || x.extent(2) % 2 != 0) {
        throw ShapeError("maxpool2x2: expected C×H×W with even H, W, got " +
                         TensorT<T>::shape_string(x.shape()));
    }
    const size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const size_t oh = h / 2, ow = w / 2;
    PoolResult<T> r{TensorT<T>({c, oh, ow}), std::vector<uint32_t>(c * oh * ow)};
    const T* in = x.data();
    for (size_t ci = 0; ci < c; ++ci) {
        const size_t base = ci * h * w;
        for (size_t i = 0; i < oh; ++i) {
            for (size_t j = 0; j < ow; ++j) {
                size_t best = base + (2 * i) * w + 2 * j;
                T bv = in[best];
                const size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (size_t k = 0; k < 3; ++k) {
                    if (in[cand[k]] > bv) {
                        bv = in[cand[k]];
                        best = cand[k];
                    }
                }
                const size_t oidx = ci * oh * ow + i * ow + j;
                r.y[oidx] = bv;
                r.argmax[oidx] = static_cast<uint32_t>(best);
            }
        }
    }
    return r;
}

// Routes each upstream value to its argmax position; zeros elsewhere.
template <typename T>
TensorT<T> maxpool2x2_backward(const std::vector<uint32_t>& argmax,
                               const TensorT<T>& upstream,
                               const std::vector<size_t>& input_shape) {
    if (argmax.size() != upstream.size()) {
        throw ShapeError("maxpool2x2_backward: upstream size " +
                         std::to_string(upstream.size()) + " != argmax count " +
                         std::to_string(argmax.size()));
    }
    TensorT<T> gx(input_shape);
    for (size_t i = 0; i < upstream.size(); ++i) {
        gx[argmax[i]] += upstream[i];
    }
    return gx;
}

// y = w·x + b with w: out×in, x: in.
template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (w.rank() != 2 || x.size() != w.extent(1)) {
        throw ShapeError("dense: input length " + std::to_string(x.size()) +
                         " does not match weights " + TensorT<T>::shape_string(w.shape()));
    }
    const size_t out_n = w.extent(0), in_n = w.extent(1);
    if (b.size() != out_n) {
        throw ShapeError("dense: bias length " + std::to_string(b.size()) +
                         " != output width " + std::to_string(out_n));
    }
    TensorT<T> y({out_n});
    for (size_t o = 0; o < out_n; ++o) {
        double acc = static_cast<double>(b[o]);
        const T* wrow = w.data() + o * in_n;
        for (size_t i = 0; i < in_n; ++i) {
            acc += static_cast<double>(wrow[i]) * static_cast<double>(x[i]);
        }
        y[o] = static_cast<T>(acc);
    }
    return y;
}

template <typename T>
struct DenseGrads {
    TensorT<T> x, w, b;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& x, const TensorT<T>& w,
                             const TensorT<T>& upstream) {
    const size_t out_n = w.extent(0), in_n = w.extent(1);
    if (upstream.size() != out_n) {
        throw ShapeError("dense_backward: upstream length " +
                         std::to_string(upstream.size()) + " != output width " +
                         std::to_string(out_n));
    }
    DenseGrads<T> g{TensorT<T>({in_n}), TensorT<T>(w.shape()), TensorT<T>({out_n})};
    for (size_t o = 0; o < out_n; ++o) {
        const T u = upstream[o];
        g.b[o] = u;
        const T* wrow = w.data() + o * in_n;
        T* gwrow = g.w.data() + o * in_n;
        for (size_t i = 0; i < in_n; ++i) gwrow[i] = u * x[i];
        if (u != T(0)) {
            for (size_t i = 0; i < in_n; ++i) {
                g.x[i] += u * wrow[i];
            }
        }
    }
    return g;
}

template <typename T>
TensorT<T> dense_backward_input(const TensorT<T>& w, const TensorT<T>& upstream) {
    const size_t out_n = w.extent(0), in_n = w.extent(1);
    if (upstream.size() != out_n) {
        throw ShapeError("dense_backward_input: upstream length " +
                         std::to_string(upstream.size()) + " != output width " +
                         std::to_string(out_n));
    }
    TensorT<T> gx({in_n});
    for (size_t o = 0; o < out_n; ++o) {
        const T u = upstream[o];
        if (u == T(0)) continue;
        const T* wrow = w.data() + o * in_n;
        for (size_t i = 0; i < in_n; ++i) gx[i] += u * wrow[i];
    }
    return gx;
}

// Gradient of ReLU given the cached post-activation values.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& activated, const TensorT<T>& upstream) {
    detail::require_same_shape(activated, upstream, "relu_backward");
    TensorT<T> g(upstream.shape());
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] = activated[i] > T(0) ? upstream[i] : T(0);
    }
    return g;
}

template <typename T>
struct DropoutResult {
    TensorT<T> y;
    TensorT<T> mask; // per-element scale: 0 or 1/(1-rate); all ones in eval mode
};

// Inverted dropout: E[y] = x in train mode, y = x in eval mode.
template <typename T>
DropoutResult<T> dropout(const TensorT<T>& x, double rate, RunMode mode, SeededRng* rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    DropoutResult<T> r{TensorT<T>(x.shape()), TensorT<T>::full(x.shape(), T(1))};
    if (mode == RunMode::Eval || rate == 0.0) {
        r.y = x;
        return r;
    }
    if (rng == nullptr) {
        throw ParameterError("dropout: train mode requires an rng");
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (size_t i = 0; i < x.size(); ++i) {
        const bool drop = rng->unit() < rate;
        r.mask[i] = drop ? T(0) : keep_scale;
        r.y[i] = x[i] * r.mask[i];
    }
    return r;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
    TensorT<T> p(logits.shape());
    double mx = -1e300;
    for (size_t i = 0; i < logits.size(); ++i) {
        mx = std::max(mx, static_cast<double>(logits[i]));
    }
    double z = 0.0;
    std::vector<double> e(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - mx);
        z += e[i];
    }
    for (size_t i = 0; i < logits.size(); ++i) p[i] = static_cast<T>(e[i] / z);
    return p;
}

template <typename T>
struct LossResult {
    double loss;
    TensorT<T> grad_logits;
};

// loss = -log softmax(logits)[label], computed with max-subtraction;
// grad = softmax(logits) - onehot(label).
template <typename T>
LossResult<T> softmax_cross_entropy(const TensorT<T>& logits, int label) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size()) {
        throw ParameterError("softmax_cross_entropy: label " + std::to_string(label) +
                             " out of range for " + std::to_string(logits.size()) +
                             " classes");
    }
    double mx = -1e300;
    for (size_t i = 0; i < logits.size(); ++i) {
        mx = std::max(mx, static_cast<double>(logits[i]));
    }
    double z = 0.0;
    std::vector<double> e(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - mx);
        z += e[i];
    }
    LossResult<T> r{0.0, TensorT<T>(logits.shape())};
    r.loss = -(static_cast<double>(logits[static_cast<size_t>(label)]) - mx - std::log(z));
    for (size_t i = 0; i < logits.size(); ++i) {
        const double p = e[i] / z;
        r.grad_logits[i] = static_cast<T>(p - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
    return r;
}

} // namespace demenscan
