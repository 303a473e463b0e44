#pragma once

#include <string>
#include <vector>

#include "slpnet/ops.hpp"
#include "slpnet/params.hpp"

namespace slpnet {

enum class Activation { identity, relu, prelu };

/// Apply the chosen activation; `slope` is only read for prelu.
template <typename T>
Var<T> apply_activation(Tape<T> *tape, const Var<T> &x, Activation act,
                        const Var<T> *slope = nullptr) {
    switch (act) {
    case Activation::identity: return x;
    case Activation::relu: return relu(tape, x);
    case Activation::prelu:
        if (!slope || !slope->defined())
            throw ValueError("apply_activation: prelu requires a slope parameter");
        return prelu(tape, x, *slope);
    }
    throw ValueError("apply_activation: unknown kind");
}

/// SNP-type convolution neuron: the activation runs on the *input*, before
/// the weighted summation — y = conv(f(x), W) + b, never f(conv(x, W) + b).
template <typename T>
struct ConvSNPLayer {
    ConvSpec spec;
    Var<T> kernel;
    Var<T> bias;
    Activation act = Activation::relu;
    Var<T> slope; // prelu only

    Var<T> forward(Tape<T> *tape, const Var<T> &x) const {
        Var<T> a = apply_activation(tape, x, act, &slope);
        return conv2d(tape, a, kernel, bias, spec);
    }
};

/// One convolution stage of an MSConvSNP branch.
template <typename T>
struct ConvStage {
    ConvSpec spec;
    Var<T> kernel;
};

/// Multi-channel SNP neuron: r kernel branches applied to one activated
/// input and summed. All branches share a single per-out-channel bias, so
/// backward produces exactly one bias gradient however many branches exist.
/// A branch may chain several stages (SLP uses 3x1 then 1x3).
template <typename T>
struct MSConvSNPLayer {
    std::vector<std::vector<ConvStage<T>>> branches;
    Var<T> bias;
    Activation act = Activation::relu;
    Var<T> slope;

    Var<T> forward(Tape<T> *tape, const Var<T> &x) const {
        if (branches.empty()) throw ValueError("MSConvSNPLayer: no branches");
        Var<T> a = apply_activation(tape, x, act, &slope);
        if (branches.size() == 1) {
            // r = 1 degenerates exactly to ConvSNPLayer: fold the bias into
            // the final stage so the computation is the identical op sequence.
            return run_branch(tape, a, branches[0], &bias);
        }
        Var<T> sum;
        for (const auto &branch : branches) {
            Var<T> y = run_branch(tape, a, branch, nullptr);
            if (sum.defined()) {
                if (!sum.value().same_shape(y.value()))
                    throw ShapeError("MSConvSNPLayer: branch output " +
                                     y.value().shape_str() + " disagrees with " +
                                     sum.value().shape_str());
                sum = add(tape, sum, y);
            } else {
                sum = y;
            }
        }
        return bias_add(tape, sum, bias);
    }

private:
    static Var<T> run_branch(Tape<T> *tape, const Var<T> &a,
                             const std::vector<ConvStage<T>> &branch,
                             const Var<T> *final_bias) {
        Var<T> y = a;
        for (size_t s = 0; s < branch.size(); ++s) {
            const bool last = s + 1 == branch.size();
            y = conv2d(tape, y, branch[s].kernel, last ? final_bias : nullptr,
                       branch[s].spec);
        }
        return y;
    }
};

template <typename T>
ConvSNPLayer<T> make_conv_snp(ParamStore<T> &params, const std::string &prefix,
                              const ConvSpec &spec, Activation act, ParamInit<T> &init) {
    ConvSNPLayer<T> l;
    l.spec = spec;
    l.act = act;
    l.kernel = params.add(prefix + ".w",
                          init.kaiming(spec.out_channels, spec.in_channels_per_group,
                                       spec.kh, spec.kw));
    l.bias = params.add(prefix + ".b", init.zero_bias(spec.out_channels));
    return l;
}

/// Branch stage kernels are named k<kh><kw> under branch<i> (1-based).
template <typename T>
MSConvSNPLayer<T> make_msconv_snp(ParamStore<T> &params, const std::string &prefix,
                                  const std::vector<std::vector<ConvSpec>> &branch_specs,
                                  Activation act, ParamInit<T> &init) {
    if (branch_specs.empty()) throw ValueError("make_msconv_snp: no branches");
    MSConvSNPLayer<T> l;
    l.act = act;
    int out_channels = -1;
    const double r = static_cast<double>(branch_specs.size());
    for (size_t b = 0; b < branch_specs.size(); ++b) {
        std::vector<ConvStage<T>> stages;
        for (size_t s = 0; s < branch_specs[b].size(); ++s) {
            const ConvSpec &sp = branch_specs[b][s];
            // the r summed branches act as one neuron: the final stage of
            // each branch sees an r-times-larger effective fan-in
            const double fan_mult = (s + 1 == branch_specs[b].size()) ? r : 1.0;
            ConvStage<T> st;
            st.spec = sp;
            st.kernel = params.add(
                prefix + ".branch" + std::to_string(b + 1) + ".k" +
                    std::to_string(sp.kh) + std::to_string(sp.kw),
                init.kaiming(sp.out_channels, sp.in_channels_per_group, sp.kh, sp.kw,
                             fan_mult));
            stages.push_back(std::move(st));
        }
        const int oc = branch_specs[b].back().out_channels;
        if (out_channels < 0) out_channels = oc;
        else if (out_channels != oc)
            throw ShapeError("make_msconv_snp: branches emit different channel counts");
        l.branches.push_back(std::move(stages));
    }
    l.bias = params.add(prefix + ".b", init.zero_bias(out_channels));
    return l;
}

} // namespace slpnet
