#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "demenscan/errors.hpp"
#include "demenscan/rng.hpp"

namespace demenscan {

// Dense n-dimensional array, row-major, with explicit shape. Float storage
// throughout the library; the double instantiation exists for the 64-bit
// gradient-check path in the tests.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

    TensorT(std::vector<size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static TensorT zeros(std::vector<size_t> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<size_t> shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t extent(size_t axis) const { return shape_.at(axis); }
    size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // Returns a tensor with the same data and a new shape of equal volume.
    TensorT reshaped(std::vector<size_t> shape) const {
        if (checked_size(shape) != data_.size()) {
            throw ShapeError("reshape from " + shape_string(shape_) + " to " +
                             shape_string(shape) + " changes element count");
        }
        return TensorT(std::move(shape), data_);
    }

    static std::string shape_string(const std::vector<size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) {
            os << (i ? "x" : "") << s[i];
        }
        os << "]";
        return os.str();
    }

private:
    static size_t checked_size(const std::vector<size_t>& shape) {
        if (shape.empty()) {
            throw ShapeError("tensor shape must have at least one extent");
        }
        size_t n = 1;
        for (size_t e : shape) {
            if (e == 0) {
                throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
            }
            n *= e;
        }
        return n;
    }

    std::vector<size_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

namespace detail {
template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         TensorT<T>::shape_string(a.shape()) + " vs " +
                         TensorT<T>::shape_string(b.shape()));
    }
}
} // namespace detail

// ---- elementwise ops (value semantics; inputs untouched) ----

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

// max-with-0, the ReLU kernel.
template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
    return out;
}

template <typename T>
double sum(const TensorT<T>& a) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]);
    return acc;
}

// ---- matmul ----

// c[i,j] = sum_p a[i,p] * b[p,j]. Products and partial sums are carried in
// double (exact products of float inputs), cast to T once per element; the
// p-ascending order is fixed so results are bit-stable run to run.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " +
                         TensorT<T>::shape_string(a.shape()) + " vs " +
                         TensorT<T>::shape_string(b.shape()));
    }
    const size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<double> acc(m * n, 0.0);
    const T* ad = a.data();
    const T* bd = b.data();
    for (size_t i = 0; i < m; ++i) {
        double* crow = acc.data() + i * n;
        const T* arow = ad + i * k;
        for (size_t p = 0; p < k; ++p) {
            const double aip = static_cast<double>(arow[p]);
            const T* brow = bd + p * n;
            for (size_t j = 0; j < n; ++j) {
                crow[j] += aip * static_cast<double>(brow[j]);
            }
        }
    }
    TensorT<T> c({m, n});
    for (size_t i = 0; i < m * n; ++i) c[i] = static_cast<T>(acc[i]);
    return c;
}

// ---- seeded fills ----

template <typename T>
TensorT<T> rng_uniform(SeededRng& rng, std::vector<size_t> shape, double lo, double hi) {
    TensorT<T> out(std::move(shape));
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
    return out;
}

template <typename T>
TensorT<T> rng_normal(SeededRng& rng, std::vector<size_t> shape, double mean, double sigma) {
    TensorT<T> out(std::move(shape));
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.normal(mean, sigma));
    return out;
}

} // namespace demenscan
