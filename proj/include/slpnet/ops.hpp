#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "slpnet/autodiff.hpp"
#include "slpnet/tensor.hpp"

namespace slpnet {

/// Geometry of one 2D cross-correlation. Kernel layout is
/// (out_channels, in_channels_per_group, kh, kw); dilation counts the step
/// between adjacent taps (1 = dense kernel).
struct ConvSpec {
    int out_channels = 0;
    int in_channels_per_group = 0;
    int kh = 1, kw = 1;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
    int dh = 1, dw = 1;
    int groups = 1;

    int in_channels() const { return in_channels_per_group * groups; }
    int out_per_group() const { return out_channels / groups; }

    /// Output spatial size; pure function of shapes, touches no data.
    std::pair<int, int> out_hw(int h, int w) const {
        int eff_h = dh * (kh - 1) + 1;
        int eff_w = dw * (kw - 1) + 1;
        int oh = (h + 2 * ph - eff_h) / sh + 1;
        int ow = (w + 2 * pw - eff_w) / sw + 1;
        if (h + 2 * ph < eff_h || w + 2 * pw < eff_w || oh <= 0 || ow <= 0)
            throw ShapeError("conv2d: zero-sized spatial output for input " +
                             std::to_string(h) + "x" + std::to_string(w));
        return {oh, ow};
    }

    void validate() const {
        if (out_channels <= 0 || in_channels_per_group <= 0 || kh <= 0 || kw <= 0 ||
            sh <= 0 || sw <= 0 || ph < 0 || pw < 0 || dh < 1 || dw < 1 || groups < 1)
            throw ValueError("conv2d: invalid ConvSpec parameter");
        if (out_channels % groups != 0)
            throw ShapeError("conv2d: group divisibility violated: out_channels " +
                             std::to_string(out_channels) + " % groups " +
                             std::to_string(groups));
    }
};

namespace detail {

/// Valid output range [lo, hi] along one axis for a kernel tap with input
/// offset `off`: indices where o*stride + off lands inside [0, in_len).
inline std::pair<int, int> tap_range(int off, int stride, int in_len, int out_len) {
    int lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    int hi = in_len - 1 - off >= 0 ? (in_len - 1 - off) / stride : -1;
    hi = std::min(hi, out_len - 1);
    return {lo, hi};
}

/// Blocked dot product with a fixed accumulation order, so results are
/// reproducible bit-for-bit while the 8 partial sums still vectorize.
template <typename T>
inline T dot_blocked(const T *a, const T *b, int len, int b_stride) {
    constexpr int B = 8;
    T acc[B] = {};
    int i = 0;
    if (b_stride == 1) {
        for (; i + B <= len; i += B)
            for (int j = 0; j < B; ++j) acc[j] += a[i + j] * b[i + j];
        for (; i < len; ++i) acc[i % B] += a[i] * b[i];
    } else {
        for (; i + B <= len; i += B)
            for (int j = 0; j < B; ++j) acc[j] += a[i + j] * b[(i + j) * b_stride];
        for (; i < len; ++i) acc[i % B] += a[i] * b[i * b_stride];
    }
    T s = T(0);
    for (int j = 0; j < B; ++j) s += acc[j];
    return s;
}

template <typename T>
void conv_forward(const Tensor4<T> &x, const Tensor4<T> &k, const Tensor4<T> *bias,
                  const ConvSpec &sp, Tensor4<T> &out) {
    const int ipg = sp.in_channels_per_group, opg = sp.out_per_group();
    const int in_h = x.h, in_w = x.w, oh = out.h, ow = out.w;
    for (int i = 0; i < x.n; ++i) {
        for (int oc = 0; oc < sp.out_channels; ++oc) {
            const int g = oc / opg;
            T *oplane = out.plane(i, oc);
            const T b = bias ? bias->data[oc] : T(0);
            std::fill(oplane, oplane + int64_t(oh) * ow, b);
            for (int icg = 0; icg < ipg; ++icg) {
                const T *xplane = x.plane(i, g * ipg + icg);
                for (int ky = 0; ky < sp.kh; ++ky) {
                    const int yoff = ky * sp.dh - sp.ph;
                    auto [oy_lo, oy_hi] = tap_range(yoff, sp.sh, in_h, oh);
                    for (int kx = 0; kx < sp.kw; ++kx) {
                        const T wv = k.at(oc, icg, ky, kx);
                        const int xoff = kx * sp.dw - sp.pw;
                        auto [ox_lo, ox_hi] = tap_range(xoff, sp.sw, in_w, ow);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T *xr = xplane + int64_t(oy * sp.sh + yoff) * in_w + xoff;
                            T *orow = oplane + int64_t(oy) * ow;
                            if (sp.sw == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * xr[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * xr[int64_t(ox) * sp.sw];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward_input(const Tensor4<T> &dout, const Tensor4<T> &k,
                         const ConvSpec &sp, Tensor4<T> &dx) {
    const int ipg = sp.in_channels_per_group, opg = sp.out_per_group();
    const int in_h = dx.h, in_w = dx.w, oh = dout.h, ow = dout.w;
    for (int i = 0; i < dx.n; ++i) {
        for (int g = 0; g < sp.groups; ++g) {
            for (int icg = 0; icg < ipg; ++icg) {
                T *dxplane = dx.plane(i, g * ipg + icg);
                for (int ocg = 0; ocg < opg; ++ocg) {
                    const int oc = g * opg + ocg;
                    const T *doplane = dout.plane(i, oc);
                    for (int ky = 0; ky < sp.kh; ++ky) {
                        const int yoff = ky * sp.dh - sp.ph;
                        auto [oy_lo, oy_hi] = tap_range(yoff, sp.sh, in_h, oh);
                        for (int kx = 0; kx < sp.kw; ++kx) {
                            const T wv = k.at(oc, icg, ky, kx);
                            const int xoff = kx * sp.dw - sp.pw;
                            auto [ox_lo, ox_hi] = tap_range(xoff, sp.sw, in_w, ow);
                            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                T *dxr = dxplane + int64_t(oy * sp.sh + yoff) * in_w + xoff;
                                const T *dor = doplane + int64_t(oy) * ow;
                                if (sp.sw == 1) {
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                        dxr[ox] += wv * dor[ox];
                                } else {
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                        dxr[int64_t(ox) * sp.sw] += wv * dor[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward_kernel(const Tensor4<T> &dout, const Tensor4<T> &x,
                          const ConvSpec &sp, Tensor4<T> &dk) {
    const int ipg = sp.in_channels_per_group, opg = sp.out_per_group();
    const int in_h = x.h, in_w = x.w, oh = dout.h, ow = dout.w;
    for (int i = 0; i < x.n; ++i) {
        for (int oc = 0; oc < sp.out_channels; ++oc) {
            const int g = oc / opg;
            const T *doplane = dout.plane(i, oc);
            for (int icg = 0; icg < ipg; ++icg) {
                const T *xplane = x.plane(i, g * ipg + icg);
                for (int ky = 0; ky < sp.kh; ++ky) {
                    const int yoff = ky * sp.dh - sp.ph;
                    auto [oy_lo, oy_hi] = tap_range(yoff, sp.sh, in_h, oh);
                    for (int kx = 0; kx < sp.kw; ++kx) {
                        const int xoff = kx * sp.dw - sp.pw;
                        auto [ox_lo, ox_hi] = tap_range(xoff, sp.sw, in_w, ow);
                        T acc = T(0);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T *dor = doplane + int64_t(oy) * ow + ox_lo;
                            const T *xr = xplane + int64_t(oy * sp.sh + yoff) * in_w +
                                          xoff + int64_t(ox_lo) * sp.sw;
                            acc += dot_blocked(dor, xr, ox_hi - ox_lo + 1, sp.sw);
                        }
                        dk.at(oc, icg, ky, kx) += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
void sum_spatial_into(const Tensor4<T> &dout, Tensor4<T> &db) {
    for (int oc = 0; oc < dout.c; ++oc) {
        T acc = T(0);
        for (int i = 0; i < dout.n; ++i) {
            const T *p = dout.plane(i, oc);
            const int64_t len = int64_t(dout.h) * dout.w;
            for (int64_t e = 0; e < len; ++e) acc += p[e];
        }
        db.data[oc] += acc;
    }
}

template <typename T>
bool has_grad(const std::shared_ptr<Node<T>> &n) {
    return n->grad.same_shape(n->value);
}

} // namespace detail

/// 2D cross-correlation (no kernel flip) with zero padding. `bias` may be
/// null; when present it is one value per output channel, shaped (1,C,1,1).
template <typename T>
Var<T> conv2d(Tape<T> *tape, const Var<T> &x, const Var<T> &kernel,
              const Var<T> *bias, const ConvSpec &spec) {
    spec.validate();
    const Tensor4<T> &xv = x.value();
    const Tensor4<T> &kv = kernel.value();
    if (kv.n != spec.out_channels || kv.c != spec.in_channels_per_group ||
        kv.h != spec.kh || kv.w != spec.kw)
        throw ShapeError("conv2d: kernel tensor " + kv.shape_str() +
                         " does not match ConvSpec");
    if (xv.c != spec.in_channels())
        throw ShapeError("conv2d: input has " + std::to_string(xv.c) +
                         " channels, spec expects " + std::to_string(spec.in_channels()));
    if (bias && (bias->value().size() != spec.out_channels))
        throw ShapeError("conv2d: bias size mismatch");
    auto [oh, ow] = spec.out_hw(xv.h, xv.w);

    Tensor4<T> out(xv.n, spec.out_channels, oh, ow);
    detail::conv_forward(xv, kv, bias ? &bias->value() : nullptr, spec, out);

    bool rg = x.requires_grad() || kernel.requires_grad() || (bias && bias->requires_grad());
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), kn = kernel.node(), yn = y.node();
        auto bn = bias ? bias->node() : nullptr;
        ConvSpec sp = spec;
        tape->record([xn, kn, bn, yn, sp] {
            if (!detail::has_grad(yn)) return;
            const Tensor4<T> &dout = yn->grad;
            if (xn->requires_grad)
                detail::conv_backward_input(dout, kn->value, sp, xn->ensure_grad());
            if (kn->requires_grad)
                detail::conv_backward_kernel(dout, xn->value, sp, kn->ensure_grad());
            if (bn && bn->requires_grad) detail::sum_spatial_into(dout, bn->ensure_grad());
        });
    }
    return y;
}

template <typename T>
Var<T> conv2d(Tape<T> *tape, const Var<T> &x, const Var<T> &kernel, const ConvSpec &spec) {
    return conv2d<T>(tape, x, kernel, nullptr, spec);
}

template <typename T>
Var<T> conv2d(Tape<T> *tape, const Var<T> &x, const Var<T> &kernel, const Var<T> &bias,
              const ConvSpec &spec) {
    return conv2d<T>(tape, x, kernel, &bias, spec);
}

/// 2x2 max-pool with stride 2. Ties route the gradient to the first element
/// in scan order (row-major within the window).
template <typename T>
Var<T> maxpool2d_2x2(Tape<T> *tape, const Var<T> &x) {
    const Tensor4<T> &xv = x.value();
    if (xv.h % 2 != 0 || xv.w % 2 != 0)
        throw ShapeError("maxpool2d_2x2: spatial dims must be even, got " + xv.shape_str());
    const int oh = xv.h / 2, ow = xv.w / 2;
    Tensor4<T> out(xv.n, xv.c, oh, ow);
    bool rg = x.requires_grad();
    std::vector<int32_t> argmax;
    if (tape && rg) argmax.resize(static_cast<size_t>(out.size()));

    int64_t oidx = 0;
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T *xp = xv.plane(i, j);
            T *op = out.plane(i, j);
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oidx) {
                    const int64_t base = int64_t(2 * oy) * xv.w + 2 * ox;
                    const int64_t cand[4] = {base, base + 1, base + xv.w, base + xv.w + 1};
                    int best = 0;
                    T bv = xp[cand[0]];
                    for (int t = 1; t < 4; ++t)
                        if (xp[cand[t]] > bv) { bv = xp[cand[t]]; best = t; }
                    op[int64_t(oy) * ow + ox] = bv;
                    if (!argmax.empty()) argmax[oidx] = static_cast<int32_t>(cand[best]);
                }
        }

    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), yn = y.node();
        auto am = std::make_shared<std::vector<int32_t>>(std::move(argmax));
        const int plane_out = oh * ow, plane_in = xv.h * xv.w;
        tape->record([xn, yn, am, plane_out, plane_in] {
            if (!detail::has_grad(yn)) return;
            Tensor4<T> &dx = xn->ensure_grad();
            const Tensor4<T> &dout = yn->grad;
            const int planes = dout.n * dout.c;
            for (int p = 0; p < planes; ++p) {
                const T *dop = dout.data.data() + int64_t(p) * plane_out;
                T *dxp = dx.data.data() + int64_t(p) * plane_in;
                const int32_t *amp = am->data() + int64_t(p) * plane_out;
                for (int e = 0; e < plane_out; ++e) dxp[amp[e]] += dop[e];
            }
        });
    }
    return y;
}

namespace detail {

/// Half-pixel source mapping for one output axis: index pair + lerp weight.
template <typename T>
struct LerpTable {
    std::vector<int> i0, i1;
    std::vector<T> f; // weight of i1
};

template <typename T>
LerpTable<T> bilinear_table(int in_len, int out_len) {
    LerpTable<T> t;
    t.i0.resize(out_len);
    t.i1.resize(out_len);
    t.f.resize(out_len);
    const double scale = double(in_len) / double(out_len);
    for (int o = 0; o < out_len; ++o) {
        double s = (o + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > in_len - 1) s = in_len - 1;
        int lo = static_cast<int>(s);
        t.i0[o] = lo;
        t.i1[o] = std::min(lo + 1, in_len - 1);
        t.f[o] = static_cast<T>(s - lo);
    }
    return t;
}

} // namespace detail

/// Bilinear upsampling by an integer factor in {2,4,8}, half-pixel mapping.
template <typename T>
Var<T> upsample_bilinear(Tape<T> *tape, const Var<T> &x, int scale) {
    if (scale != 2 && scale != 4 && scale != 8)
        throw ValueError("upsample_bilinear: unsupported scale " + std::to_string(scale));
    const Tensor4<T> &xv = x.value();
    const int oh = xv.h * scale, ow = xv.w * scale;
    auto ty = std::make_shared<detail::LerpTable<T>>(detail::bilinear_table<T>(xv.h, oh));
    auto tx = std::make_shared<detail::LerpTable<T>>(detail::bilinear_table<T>(xv.w, ow));

    Tensor4<T> out(xv.n, xv.c, oh, ow);
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T *xp = xv.plane(i, j);
            T *op = out.plane(i, j);
            for (int oy = 0; oy < oh; ++oy) {
                const T *r0 = xp + int64_t(ty->i0[oy]) * xv.w;
                const T *r1 = xp + int64_t(ty->i1[oy]) * xv.w;
                const T fy = ty->f[oy];
                T *orow = op + int64_t(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const T fx = tx->f[ox];
                    const T a = r0[tx->i0[ox]] + fx * (r0[tx->i1[ox]] - r0[tx->i0[ox]]);
                    const T b = r1[tx->i0[ox]] + fx * (r1[tx->i1[ox]] - r1[tx->i0[ox]]);
                    orow[ox] = a + fy * (b - a);
                }
            }
        }

    bool rg = x.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn, ty, tx] {
            if (!detail::has_grad(yn)) return;
            Tensor4<T> &dx = xn->ensure_grad();
            const Tensor4<T> &dout = yn->grad;
            for (int i = 0; i < dx.n; ++i)
                for (int j = 0; j < dx.c; ++j) {
                    T *dxp = dx.plane(i, j);
                    const T *dop = dout.plane(i, j);
                    for (int oy = 0; oy < dout.h; ++oy) {
                        const T fy = ty->f[oy];
                        T *d0 = dxp + int64_t(ty->i0[oy]) * dx.w;
                        T *d1 = dxp + int64_t(ty->i1[oy]) * dx.w;
                        const T *dor = dop + int64_t(oy) * dout.w;
                        for (int ox = 0; ox < dout.w; ++ox) {
                            const T fx = tx->f[ox];
                            const T g = dor[ox];
                            d0[tx->i0[ox]] += (T(1) - fy) * (T(1) - fx) * g;
                            d0[tx->i1[ox]] += (T(1) - fy) * fx * g;
                            d1[tx->i0[ox]] += fy * (T(1) - fx) * g;
                            d1[tx->i1[ox]] += fy * fx * g;
                        }
                    }
                }
        });
    }
    return y;
}

/// max(0, x).
template <typename T>
Var<T> relu(Tape<T> *tape, const Var<T> &x) {
    const Tensor4<T> &xv = x.value();
    Tensor4<T> out(xv.n, xv.c, xv.h, xv.w);
    for (int64_t i = 0; i < xv.size(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    bool rg = x.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn] {
            if (!detail::has_grad(yn)) return;
            Tensor4<T> &dx = xn->ensure_grad();
            for (int64_t i = 0; i < dx.size(); ++i)
                if (xn->value.data[i] > T(0)) dx.data[i] += yn->grad.data[i];
        });
    }
    return y;
}

/// max(0, x) + lambda * min(0, x) with a learnable scalar slope, shaped (1,1,1,1).
template <typename T>
Var<T> prelu(Tape<T> *tape, const Var<T> &x, const Var<T> &slope) {
    if (slope.value().size() != 1)
        throw ShapeError("prelu: slope must be a scalar parameter");
    const Tensor4<T> &xv = x.value();
    const T lam = slope.value().data[0];
    Tensor4<T> out(xv.n, xv.c, xv.h, xv.w);
    for (int64_t i = 0; i < xv.size(); ++i) {
        const T v = xv.data[i];
        out.data[i] = v > T(0) ? v : lam * v;
    }
    bool rg = x.requires_grad() || slope.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), sn = slope.node(), yn = y.node();
        tape->record([xn, sn, yn] {
            if (!detail::has_grad(yn)) return;
            const Tensor4<T> &dout = yn->grad;
            const T lam = sn->value.data[0];
            if (xn->requires_grad) {
                Tensor4<T> &dx = xn->ensure_grad();
                for (int64_t i = 0; i < dx.size(); ++i)
                    dx.data[i] += (xn->value.data[i] > T(0) ? T(1) : lam) * dout.data[i];
            }
            if (sn->requires_grad) {
                T acc = T(0);
                for (int64_t i = 0; i < dout.size(); ++i)
                    if (xn->value.data[i] < T(0)) acc += xn->value.data[i] * dout.data[i];
                sn->ensure_grad().data[0] += acc;
            }
        });
    }
    return y;
}

/// Concatenate along the channel axis; inputs must agree on n, h, w.
template <typename T>
Var<T> concat_channels(Tape<T> *tape, const std::vector<Var<T>> &xs) {
    if (xs.empty()) throw ValueError("concat_channels: no inputs");
    const Tensor4<T> &first = xs[0].value();
    int total_c = 0;
    bool rg = false;
    for (const auto &v : xs) {
        const Tensor4<T> &t = v.value();
        if (t.n != first.n || t.h != first.h || t.w != first.w)
            throw ShapeError("concat_channels: mismatched shape " + t.shape_str() +
                             " vs " + first.shape_str());
        total_c += t.c;
        rg = rg || v.requires_grad();
    }
    Tensor4<T> out(first.n, total_c, first.h, first.w);
    const int64_t plane = int64_t(first.h) * first.w;
    for (int i = 0; i < first.n; ++i) {
        int co = 0;
        for (const auto &v : xs) {
            const Tensor4<T> &t = v.value();
            std::copy(t.plane(i, 0), t.plane(i, 0) + int64_t(t.c) * plane, out.plane(i, co));
            co += t.c;
        }
    }
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        std::vector<std::shared_ptr<detail::Node<T>>> ins;
        for (const auto &v : xs) ins.push_back(v.node());
        auto yn = y.node();
        tape->record([ins, yn, plane] {
            if (!detail::has_grad(yn)) return;
            const Tensor4<T> &dout = yn->grad;
            for (int i = 0; i < dout.n; ++i) {
                int co = 0;
                for (const auto &xn : ins) {
                    const int ci = xn->value.c;
                    if (xn->requires_grad) {
                        Tensor4<T> &dx = xn->ensure_grad();
                        const T *src = dout.plane(i, co);
                        T *dst = dx.plane(i, 0);
                        for (int64_t e = 0; e < int64_t(ci) * plane; ++e) dst[e] += src[e];
                    }
                    co += ci;
                }
            }
        });
    }
    return y;
}

/// Elementwise sum of two same-shaped tensors.
template <typename T>
Var<T> add(Tape<T> *tape, const Var<T> &a, const Var<T> &b) {
    const Tensor4<T> &av = a.value(), &bv = b.value();
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor4<T> out(av.n, av.c, av.h, av.w);
    for (int64_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        tape->record([an, bn, yn] {
            if (!detail::has_grad(yn)) return;
            const Tensor4<T> &dout = yn->grad;
            for (auto &n : {an, bn})
                if (n->requires_grad) {
                    Tensor4<T> &d = n->ensure_grad();
                    for (int64_t i = 0; i < dout.size(); ++i) d.data[i] += dout.data[i];
                }
        });
    }
    return y;
}

/// Add a per-channel bias vector, shaped (1,C,1,1), broadcast over n, h, w.
template <typename T>
Var<T> bias_add(Tape<T> *tape, const Var<T> &x, const Var<T> &bias) {
    const Tensor4<T> &xv = x.value(), &bv = bias.value();
    if (bv.size() != xv.c)
        throw ShapeError("bias_add: bias size " + std::to_string(bv.size()) +
                         " != channels " + std::to_string(xv.c));
    Tensor4<T> out(xv.n, xv.c, xv.h, xv.w);
    const int64_t plane = int64_t(xv.h) * xv.w;
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T b = bv.data[j];
            const T *src = xv.plane(i, j);
            T *dst = out.plane(i, j);
            for (int64_t e = 0; e < plane; ++e) dst[e] = src[e] + b;
        }
    bool rg = x.requires_grad() || bias.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), bn = bias.node(), yn = y.node();
        tape->record([xn, bn, yn] {
            if (!detail::has_grad(yn)) return;
            const Tensor4<T> &dout = yn->grad;
            if (xn->requires_grad) {
                Tensor4<T> &dx = xn->ensure_grad();
                for (int64_t i = 0; i < dout.size(); ++i) dx.data[i] += dout.data[i];
            }
            if (bn->requires_grad) detail::sum_spatial_into(dout, bn->ensure_grad());
        });
    }
    return y;
}

/// Logistic function, overflow-safe on both tails.
template <typename T>
Var<T> sigmoid(Tape<T> *tape, const Var<T> &x) {
    const Tensor4<T> &xv = x.value();
    Tensor4<T> out(xv.n, xv.c, xv.h, xv.w);
    for (int64_t i = 0; i < xv.size(); ++i) {
        const T v = xv.data[i];
        if (v >= T(0)) {
            out.data[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out.data[i] = e / (T(1) + e);
        }
    }
    bool rg = x.requires_grad();
    Var<T> y(std::move(out), rg);
    if (tape && rg) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn] {
            if (!detail::has_grad(yn)) return;
            Tensor4<T> &dx = xn->ensure_grad();
            for (int64_t i = 0; i < dx.size(); ++i) {
                const T s = yn->value.data[i];
                dx.data[i] += s * (T(1) - s) * yn->grad.data[i];
            }
        });
    }
    return y;
}

/// Mean binary cross-entropy over all elements. `pred` holds probabilities
/// (clamped to [1e-7, 1-1e-7]); `target` must be strictly {0,1}.
template <typename T>
Var<T> bce_loss(Tape<T> *tape, const Var<T> &pred, const Tensor4<T> &target) {
    const Tensor4<T> &pv = pred.value();
    if (!pv.same_shape(target))
        throw ShapeError("bce_loss: shape mismatch " + pv.shape_str() + " vs " +
                         target.shape_str());
    constexpr T eps = T(1e-7);
    double acc = 0.0;
    for (int64_t i = 0; i < pv.size(); ++i) {
        const T t = target.data[i];
        if (t != T(0) && t != T(1)) throw ValueError("bce_loss: target is not binary");
        const T p = std::clamp(pv.data[i], eps, T(1) - eps);
        acc -= double(t) * std::log(double(p)) +
               (1.0 - double(t)) * std::log(1.0 - double(p));
    }
    const T count = static_cast<T>(pv.size());
    Var<T> y(Tensor4<T>::scalar(static_cast<T>(acc) / count), pred.requires_grad());
    if (tape && pred.requires_grad()) {
        auto pn = pred.node(), yn = y.node();
        auto tn = std::make_shared<Tensor4<T>>(target);
        tape->record([pn, yn, tn, count] {
            if (!detail::has_grad(yn)) return;
            const T g = yn->grad.data[0] / count;
            Tensor4<T> &dp = pn->ensure_grad();
            for (int64_t i = 0; i < dp.size(); ++i) {
                const T p = pn->value.data[i];
                if (p <= eps || p >= T(1) - eps) continue; // clamped region
                const T t = tn->data[i];
                dp.data[i] += g * (-t / p + (T(1) - t) / (T(1) - p));
            }
        });
    }
    return y;
}

/// Soft Dice loss 1 - (2*sum(p*t)+1)/(sum(p)+sum(t)+1); optional companion
/// to BCE for the combined-loss switch.
template <typename T>
Var<T> dice_loss(Tape<T> *tape, const Var<T> &pred, const Tensor4<T> &target) {
    const Tensor4<T> &pv = pred.value();
    if (!pv.same_shape(target))
        throw ShapeError("dice_loss: shape mismatch");
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int64_t i = 0; i < pv.size(); ++i) {
        inter += double(pv.data[i]) * double(target.data[i]);
        psum += double(pv.data[i]);
        tsum += double(target.data[i]);
    }
    const double num = 2.0 * inter + 1.0, den = psum + tsum + 1.0;
    Var<T> y(Tensor4<T>::scalar(static_cast<T>(1.0 - num / den)), pred.requires_grad());
    if (tape && pred.requires_grad()) {
        auto pn = pred.node(), yn = y.node();
        auto tn = std::make_shared<Tensor4<T>>(target);
        const T numT = static_cast<T>(num), denT = static_cast<T>(den);
        tape->record([pn, yn, tn, numT, denT] {
            if (!detail::has_grad(yn)) return;
            const T g = yn->grad.data[0];
            Tensor4<T> &dp = pn->ensure_grad();
            for (int64_t i = 0; i < dp.size(); ++i)
                dp.data[i] -= g * (T(2) * tn->data[i] * denT - numT) / (denT * denT);
        });
    }
    return y;
}

/// Reduce to a (1,1,1,1) scalar by summation.
template <typename T>
Var<T> sum_all(Tape<T> *tape, const Var<T> &x) {
    const Tensor4<T> &xv = x.value();
    double acc = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) acc += double(xv.data[i]);
    Var<T> y(Tensor4<T>::scalar(static_cast<T>(acc)), x.requires_grad());
    if (tape && x.requires_grad()) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn] {
            if (!detail::has_grad(yn)) return;
            const T g = yn->grad.data[0];
            Tensor4<T> &dx = xn->ensure_grad();
            for (int64_t i = 0; i < dx.size(); ++i) dx.data[i] += g;
        });
    }
    return y;
}

} // namespace slpnet
