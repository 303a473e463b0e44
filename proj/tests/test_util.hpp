#pragma once

#include <random>

#include "slpnet/ops.hpp"
#include "slpnet/tensor.hpp"

namespace slpnet::testing {

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, std::mt19937_64 &rng,
                         T lo = T(-1), T hi = T(1)) {
    Tensor4<T> t(n, c, h, w);
    std::uniform_real_distribution<double> dist{double(lo), double(hi)};
    for (auto &v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

/// Independent direct-summation convolution: one accumulation per output
/// element, every kernel tap visited, zero padding by bounds test. Kept
/// deliberately naive so it shares nothing with the production loop nest.
template <typename T>
Tensor4<T> conv_oracle(const Tensor4<T> &x, const Tensor4<T> &k,
                       const std::vector<T> *bias, const ConvSpec &sp) {
    auto [oh, ow] = sp.out_hw(x.h, x.w);
    const int ipg = sp.in_channels_per_group;
    const int opg = sp.out_channels / sp.groups;
    Tensor4<T> out(x.n, sp.out_channels, oh, ow);
    for (int i = 0; i < x.n; ++i)
        for (int oc = 0; oc < sp.out_channels; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const int g = oc / opg;
                    double acc = bias ? double((*bias)[oc]) : 0.0;
                    for (int icg = 0; icg < ipg; ++icg)
                        for (int ky = 0; ky < sp.kh; ++ky)
                            for (int kx = 0; kx < sp.kw; ++kx) {
                                const int iy = oy * sp.sh - sp.ph + ky * sp.dh;
                                const int ix = ox * sp.sw - sp.pw + kx * sp.dw;
                                if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                                    acc += double(k.at(oc, icg, ky, kx)) *
                                           double(x.at(i, g * ipg + icg, iy, ix));
                            }
                    out.at(i, oc, oy, ox) = static_cast<T>(acc);
                }
    return out;
}

template <typename T>
Tensor4<T> conv_oracle(const Tensor4<T> &x, const Tensor4<T> &k, const ConvSpec &sp) {
    return conv_oracle<T>(x, k, nullptr, sp);
}

template <typename T>
double max_rel_diff(const Tensor4<T> &a, const Tensor4<T> &b) {
    if (!a.same_shape(b)) return 1e30;
    double worst = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(double(a.data[i]) - double(b.data[i]));
        const double rel = d / std::max({std::abs(double(a.data[i])),
                                         std::abs(double(b.data[i])), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace slpnet::testing
