#pragma once

#include "slpnet/ops.hpp"
#include "slpnet/tensor.hpp"

namespace slpnet {

/// Bilinear resample to an arbitrary size, half-pixel mapping. Plain tensor
/// transform (no autodiff); used for the input-image pyramid and data
/// loading, where gradients never flow.
template <typename T>
Tensor4<T> resize_bilinear(const Tensor4<T> &x, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw ShapeError("resize_bilinear: non-positive target");
    if (x.h == oh && x.w == ow) return x;
    auto ty = detail::bilinear_table<T>(x.h, oh);
    auto tx = detail::bilinear_table<T>(x.w, ow);
    Tensor4<T> out(x.n, x.c, oh, ow);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            const T *xp = x.plane(i, j);
            T *op = out.plane(i, j);
            for (int oy = 0; oy < oh; ++oy) {
                const T *r0 = xp + int64_t(ty.i0[oy]) * x.w;
                const T *r1 = xp + int64_t(ty.i1[oy]) * x.w;
                const T fy = ty.f[oy];
                T *orow = op + int64_t(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const T fx = tx.f[ox];
                    const T a = r0[tx.i0[ox]] + fx * (r0[tx.i1[ox]] - r0[tx.i0[ox]]);
                    const T b = r1[tx.i0[ox]] + fx * (r1[tx.i1[ox]] - r1[tx.i0[ox]]);
                    orow[ox] = a + fy * (b - a);
                }
            }
        }
    return out;
}

/// Nearest-neighbor resample, half-pixel mapping. Keeps masks strictly binary.
template <typename T>
Tensor4<T> resize_nearest(const Tensor4<T> &x, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw ShapeError("resize_nearest: non-positive target");
    if (x.h == oh && x.w == ow) return x;
    std::vector<int> ys(oh), xs(ow);
    for (int o = 0; o < oh; ++o)
        ys[o] = std::min(x.h - 1, static_cast<int>((o + 0.5) * double(x.h) / oh));
    for (int o = 0; o < ow; ++o)
        xs[o] = std::min(x.w - 1, static_cast<int>((o + 0.5) * double(x.w) / ow));
    Tensor4<T> out(x.n, x.c, oh, ow);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            const T *xp = x.plane(i, j);
            T *op = out.plane(i, j);
            for (int oy = 0; oy < oh; ++oy) {
                const T *xr = xp + int64_t(ys[oy]) * x.w;
                for (int ox = 0; ox < ow; ++ox) op[int64_t(oy) * ow + ox] = xr[xs[ox]];
            }
        }
    return out;
}

} // namespace slpnet
