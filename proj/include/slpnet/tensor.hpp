#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slpnet {

/// Shape or layout violation (channel mismatch, indivisible dims, ...).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Bad value passed to an operation (non-binary mask, unsupported scale, ...).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Filesystem / decode / serialization failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense rank-4 array in NCHW layout, row-major with w fastest.
/// The single value type for activations, kernels and gradients.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;

    Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(int64_t(n_) * c_ * h_ * w_), fill) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw ShapeError("Tensor4: negative dimension");
    }

    static Tensor4 scalar(T v) {
        Tensor4 t(1, 1, 1, 1);
        t.data[0] = v;
        return t;
    }

    int64_t size() const { return int64_t(n) * c * h * w; }

    bool same_shape(const Tensor4 &o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    int64_t index(int i, int j, int y, int x) const {
        return ((int64_t(i) * c + j) * h + y) * w + x;
    }

    T &at(int i, int j, int y, int x) { return data[index(i, j, y, x)]; }
    T at(int i, int j, int y, int x) const { return data[index(i, j, y, x)]; }

    /// Pointer to the start of one (image, channel) plane.
    T *plane(int i, int j) { return data.data() + (int64_t(i) * c + j) * h * w; }
    const T *plane(int i, int j) const {
        return data.data() + (int64_t(i) * c + j) * h * w;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(n, c, h, w);
        for (int64_t i = 0; i < size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

} // namespace slpnet
