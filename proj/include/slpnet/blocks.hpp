#pragma once

#include <array>
#include <set>
#include <string>

#include "slpnet/ops.hpp"
#include "slpnet/snp.hpp"

namespace slpnet {

namespace detail {

inline ConvSpec conv3x3(int out_c, int in_c, int stride = 1) {
    ConvSpec sp;
    sp.out_channels = out_c;
    sp.in_channels_per_group = in_c;
    sp.kh = sp.kw = 3;
    sp.sh = sp.sw = stride;
    sp.ph = sp.pw = 1;
    return sp;
}

inline ConvSpec conv1x1(int out_c, int in_c) {
    ConvSpec sp;
    sp.out_channels = out_c;
    sp.in_channels_per_group = in_c;
    return sp;
}

} // namespace detail

/// Entry block: three successive 3x3 stride-1 convolutions, each followed by
/// ReLU, lifting the RGB input to the first stage width.
template <typename T>
struct InitBlock {
    std::array<ConvSpec, 3> specs;
    std::array<Var<T>, 3> kernels;
    std::array<Var<T>, 3> biases;

    Var<T> forward(Tape<T> *tape, const Var<T> &x) const {
        if (x.value().c != specs[0].in_channels())
            throw ShapeError("initblock: expected " +
                             std::to_string(specs[0].in_channels()) +
                             "-channel input, got " + std::to_string(x.value().c));
        Var<T> y = x;
        for (int i = 0; i < 3; ++i)
            y = relu(tape, conv2d(tape, y, kernels[i], biases[i], specs[i]));
        return y;
    }
};

template <typename T>
InitBlock<T> make_init_block(ParamStore<T> &params, const std::string &prefix,
                             int out_channels, ParamInit<T> &init) {
    InitBlock<T> b;
    b.specs = {detail::conv3x3(out_channels, 3), detail::conv3x3(out_channels, out_channels),
               detail::conv3x3(out_channels, out_channels)};
    for (int i = 0; i < 3; ++i) {
        const std::string layer = prefix + ".conv" + std::to_string(i + 1);
        const ConvSpec &sp = b.specs[i];
        b.kernels[i] = params.add(layer + ".w",
                                  init.kaiming(sp.out_channels, sp.in_channels_per_group,
                                               sp.kh, sp.kw));
        b.biases[i] = params.add(layer + ".b", init.zero_bias(sp.out_channels));
    }
    return b;
}

/// SNP-type downsampling: concat(3x3 stride-2 conv + ReLU, 2x2 max-pool,
/// downsampled input image), halving resolution. The conv branch emits
/// out_channels - in_channels - 3 channels so the concat lands exactly on
/// the stage width.
template <typename T>
struct SDSBlock {
    int in_channels = 0;
    int out_channels = 0;
    ConvSpec conv_spec;
    Var<T> conv_kernel;
    Var<T> conv_bias;

    Var<T> forward(Tape<T> *tape, const Var<T> &x, const Var<T> &image_at_scale) const {
        const Tensor4<T> &xv = x.value();
        if (xv.c != in_channels)
            throw ShapeError("sds: expected " + std::to_string(in_channels) +
                             " input channels, got " + std::to_string(xv.c));
        if (xv.h % 2 != 0 || xv.w % 2 != 0)
            throw ShapeError("sds: input spatial dims must be even, got " + xv.shape_str());
        const Tensor4<T> &im = image_at_scale.value();
        if (im.c != 3 || im.h != xv.h / 2 || im.w != xv.w / 2)
            throw ShapeError("sds: image scale mismatch, expected (n,3," +
                             std::to_string(xv.h / 2) + "," + std::to_string(xv.w / 2) +
                             "), got " + im.shape_str());
        Var<T> conv = relu(tape, conv2d(tape, x, conv_kernel, conv_bias, conv_spec));
        Var<T> pool = maxpool2d_2x2(tape, x);
        return concat_channels(tape, {conv, pool, image_at_scale});
    }
};

template <typename T>
SDSBlock<T> make_sds_block(ParamStore<T> &params, const std::string &prefix,
                           int in_channels, int out_channels, ParamInit<T> &init) {
    const int conv_channels = out_channels - in_channels - 3;
    if (conv_channels < 1)
        throw ValueError("sds: out_channels must exceed in_channels + 3");
    SDSBlock<T> b;
    b.in_channels = in_channels;
    b.out_channels = out_channels;
    b.conv_spec = detail::conv3x3(conv_channels, in_channels, /*stride=*/2);
    b.conv_kernel = params.add(prefix + ".conv.w",
                               init.kaiming(conv_channels, in_channels, 3, 3));
    b.conv_bias = params.add(prefix + ".conv.b", init.zero_bias(conv_channels));
    return b;
}

/// SNP-type lightweight pyramid: a 4-branch multi-dilation depthwise-style
/// neuron (3x1 then 1x3 grouped convolutions per branch, one shared bias)
/// followed by a 1x1 SNP pointwise neuron, wrapped in a residual add. The
/// channel count 2N is preserved; each branch squeezes to N in between.
template <typename T>
struct SLPBlock {
    int channels = 0; // 2N
    MSConvSNPLayer<T> dw;
    ConvSNPLayer<T> pw;

    Var<T> forward(Tape<T> *tape, const Var<T> &x) const {
        if (x.value().c != channels)
            throw ShapeError("slp: expected " + std::to_string(channels) +
                             " channels, got " + std::to_string(x.value().c));
        Var<T> encoded = pw.forward(tape, dw.forward(tape, x));
        return add(tape, x, encoded);
    }
};

template <typename T>
SLPBlock<T> make_slp_block(ParamStore<T> &params, const std::string &prefix, int channels,
                           const std::array<int, 4> &dilation_zeros, ParamInit<T> &init) {
    if (channels < 2 || channels % 2 != 0)
        throw ValueError("slp: channel count must be even, got " + std::to_string(channels));
    if (std::set<int>(dilation_zeros.begin(), dilation_zeros.end()).size() != 4)
        throw ValueError("slp: the four branch dilations must be distinct");
    const int n = channels / 2;
    SLPBlock<T> b;
    b.channels = channels;

    std::vector<std::vector<ConvSpec>> branch_specs;
    for (int zeros : dilation_zeros) {
        const int d = zeros + 1; // d zeros between taps == dilation factor d+1
        ConvSpec s31;
        s31.out_channels = n;
        s31.in_channels_per_group = 2;
        s31.kh = 3;
        s31.dh = d;
        s31.ph = d; // keeps height: d*(3-1)/2
        s31.groups = n;
        ConvSpec s13;
        s13.out_channels = channels;
        s13.in_channels_per_group = 1;
        s13.kw = 3;
        s13.dw = d;
        s13.pw = d;
        s13.groups = n;
        branch_specs.push_back({s31, s13});
    }
    b.dw = make_msconv_snp(params, prefix + ".dw", branch_specs, Activation::relu, init);
    b.pw = make_conv_snp(params, prefix + ".pw", detail::conv1x1(channels, channels),
                         Activation::relu, init);
    return b;
}

/// SNP-type feature self-adaptation: PReLU, then parallel 3x3 and 1x1
/// projections to N channels each, concatenated back to 2N and upsampled to
/// the output resolution. Stands in for a decoder stage.
template <typename T>
struct SFABlock {
    int channels = 0; // 2N
    int upscale = 2;
    Var<T> slope;
    ConvSpec psi3_spec, psi1_spec;
    Var<T> psi3_kernel, psi3_bias;
    Var<T> psi1_kernel, psi1_bias;

    Var<T> forward(Tape<T> *tape, const Var<T> &x) const {
        if (x.value().c != channels)
            throw ShapeError("sfa: expected " + std::to_string(channels) +
                             " channels, got " + std::to_string(x.value().c));
        Var<T> a = prelu(tape, x, slope);
        Var<T> y3 = conv2d(tape, a, psi3_kernel, psi3_bias, psi3_spec);
        Var<T> y1 = conv2d(tape, a, psi1_kernel, psi1_bias, psi1_spec);
        return upsample_bilinear(tape, concat_channels(tape, {y3, y1}), upscale);
    }
};

template <typename T>
SFABlock<T> make_sfa_block(ParamStore<T> &params, const std::string &prefix, int channels,
                           int upscale, ParamInit<T> &init) {
    if (channels < 2 || channels % 2 != 0)
        throw ValueError("sfa: channel count must be even");
    const int n = channels / 2;
    SFABlock<T> b;
    b.channels = channels;
    b.upscale = upscale;
    b.slope = params.add(prefix + ".slope", Tensor4<T>::scalar(T(0.25)), /*decay=*/false);
    b.psi3_spec = detail::conv3x3(n, channels);
    b.psi3_kernel = params.add(prefix + ".psi3.w", init.kaiming(n, channels, 3, 3));
    b.psi3_bias = params.add(prefix + ".psi3.b", init.zero_bias(n));
    b.psi1_spec = detail::conv1x1(n, channels);
    b.psi1_kernel = params.add(prefix + ".psi1.w", init.kaiming(n, channels, 1, 1));
    b.psi1_bias = params.add(prefix + ".psi1.b", init.zero_bias(n));
    return b;
}

} // namespace slpnet
