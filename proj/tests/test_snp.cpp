#include <gtest/gtest.h>

#include <random>

#include "slpnet/grad_check.hpp"
#include "slpnet/snp.hpp"
#include "test_util.hpp"

using namespace slpnet;
using slpnet::testing::max_rel_diff;
using slpnet::testing::random_tensor;

namespace {

ConvSpec pointwise(int oc, int ic) {
    ConvSpec sp;
    sp.out_channels = oc;
    sp.in_channels_per_group = ic;
    return sp;
}

// 1-D example embedded as a (1,2,1,1) tensor with a 1x1 two-channel kernel.
Var<double> two_channel_input(double a, double b) {
    Tensor4<double> x(1, 2, 1, 1);
    x.data = {a, b};
    return Var<double>(x);
}

ConvSNPLayer<double> snp_from(const std::vector<double> &w, double b, Activation act) {
    ConvSNPLayer<double> l;
    l.spec = pointwise(1, static_cast<int>(w.size()));
    Tensor4<double> k(1, static_cast<int>(w.size()), 1, 1);
    k.data = w;
    l.kernel = Var<double>(k, true);
    l.bias = Var<double>(Tensor4<double>::scalar(b), true);
    l.act = act;
    return l;
}

} // namespace

TEST(ConvSNP, ActivationPrecedesWeighting) {
    // relu first: 1*relu(-1) + 2*relu(3) + 0.5 = 6.5.
    auto layer = snp_from({1, 2}, 0.5, Activation::relu);
    auto y = layer.forward(nullptr, two_channel_input(-1, 3));
    ASSERT_EQ(y.value().size(), 1);
    EXPECT_DOUBLE_EQ(y.value().data[0], 6.5);

    // the conventional order would give relu(1*-1 + 2*3 + 0.5) = 5.5.
    auto conv = conv2d<double>(nullptr, two_channel_input(-1, 3), layer.kernel,
                               layer.bias, layer.spec);
    auto conventional = relu<double>(nullptr, conv);
    EXPECT_DOUBLE_EQ(conventional.value().data[0], 5.5);
}

TEST(ConvSNP, IdentityActivationEqualsPlainConvBitwise) {
    std::mt19937_64 rng(21);
    ConvSNPLayer<double> l;
    l.spec = pointwise(3, 4);
    l.spec.kh = l.spec.kw = 3;
    l.spec.ph = l.spec.pw = 1;
    l.kernel = Var<double>(random_tensor<double>(3, 4, 3, 3, rng), true);
    l.bias = Var<double>(random_tensor<double>(1, 3, 1, 1, rng), true);
    l.act = Activation::identity;

    auto x = Var<double>(random_tensor<double>(2, 4, 6, 6, rng));
    auto snp = l.forward(nullptr, x);
    auto plain = conv2d<double>(nullptr, x, l.kernel, l.bias, l.spec);
    for (int64_t i = 0; i < snp.value().size(); ++i)
        EXPECT_EQ(snp.value().data[i], plain.value().data[i]);
}

TEST(ConvSNP, ZeroInputEmitsBias) {
    auto layer = snp_from({3, -2}, 0.75, Activation::relu);
    Tensor4<double> x(1, 2, 4, 4);
    auto y = layer.forward(nullptr, Var<double>(x));
    for (double v : y.value().data) EXPECT_DOUBLE_EQ(v, 0.75);
}

TEST(ConvSNP, OrderingDistinctionOnMixedSignInput) {
    std::mt19937_64 rng(31);
    ConvSNPLayer<double> l;
    l.spec = pointwise(2, 3);
    l.kernel = Var<double>(random_tensor<double>(2, 3, 1, 1, rng), true);
    l.bias = Var<double>(random_tensor<double>(1, 2, 1, 1, rng), true);
    auto x = Var<double>(random_tensor<double>(1, 3, 5, 5, rng)); // mixed signs
    auto snp = l.forward(nullptr, x);
    auto conventional =
        relu<double>(nullptr, conv2d<double>(nullptr, x, l.kernel, l.bias, l.spec));
    int differing = 0;
    for (int64_t i = 0; i < snp.value().size(); ++i)
        if (snp.value().data[i] != conventional.value().data[i]) ++differing;
    EXPECT_GT(differing, 0);
}

TEST(MSConvSNP, HandExample) {
    // relu([-1,3]) = [0,3]; branch1 [1,1] -> 3, branch2 [2,0] -> 0, +1 = 4.
    MSConvSNPLayer<double> l;
    Tensor4<double> k1(1, 2, 1, 1), k2(1, 2, 1, 1);
    k1.data = {1, 1};
    k2.data = {2, 0};
    l.branches = {{ConvStage<double>{pointwise(1, 2), Var<double>(k1, true)}},
                  {ConvStage<double>{pointwise(1, 2), Var<double>(k2, true)}}};
    l.bias = Var<double>(Tensor4<double>::scalar(1.0), true);
    auto y = l.forward(nullptr, two_channel_input(-1, 3));
    EXPECT_DOUBLE_EQ(y.value().data[0], 4.0);
}

TEST(MSConvSNP, SingleBranchDegeneratesToConvSNPBitwise) {
    std::mt19937_64 rng(41);
    auto k = random_tensor<double>(3, 2, 1, 1, rng);
    auto b = random_tensor<double>(1, 3, 1, 1, rng);

    ConvSNPLayer<double> single;
    single.spec = pointwise(3, 2);
    single.kernel = Var<double>(k, true);
    single.bias = Var<double>(b, true);

    MSConvSNPLayer<double> multi;
    multi.branches = {{ConvStage<double>{pointwise(3, 2), Var<double>(k, true)}}};
    multi.bias = Var<double>(b, true);

    auto x = Var<double>(random_tensor<double>(2, 2, 5, 5, rng));
    auto ys = single.forward(nullptr, x);
    auto ym = multi.forward(nullptr, x);
    for (int64_t i = 0; i < ys.value().size(); ++i)
        EXPECT_EQ(ys.value().data[i], ym.value().data[i]);
}

TEST(MSConvSNP, OneBiasGradientEqualToOutputCount) {
    // With upstream gradient of ones the bias gradient is the number of
    // output positions n*h*w, for any branch count.
    std::mt19937_64 rng(51);
    for (int r : {1, 2, 4}) {
        ParamStore<double> ps;
        ParamInit<double> init(9);
        std::vector<std::vector<ConvSpec>> specs(r, {pointwise(2, 3)});
        auto layer = make_msconv_snp(ps, "ms", specs, Activation::relu, init);

        int bias_entries = 0;
        for (const auto &e : ps.entries())
            if (e.name == "ms.b") ++bias_entries;
        EXPECT_EQ(bias_entries, 1);
        EXPECT_EQ(static_cast<int>(ps.entries().size()), r + 1);

        Tape<double> tape;
        auto x = Var<double>(random_tensor<double>(2, 3, 4, 5, rng));
        auto y = layer.forward(&tape, x);
        y.grad().fill(1.0);
        tape.backward();
        for (double g : layer.bias.grad().data) EXPECT_DOUBLE_EQ(g, 2.0 * 4 * 5);
    }
}

TEST(MSConvSNP, BiasGradientMatchesSummedKernelSingleBranch) {
    // for an arbitrary upstream gradient, the r=4 bias gradient equals the
    // one from the r=1 layer built with the summed kernel
    std::mt19937_64 rng(91);
    ParamStore<double> ps;
    ParamInit<double> init(19);
    std::vector<std::vector<ConvSpec>> specs(4, {pointwise(2, 3)});
    auto multi = make_msconv_snp(ps, "ms", specs, Activation::relu, init);

    Tensor4<double> summed(2, 3, 1, 1);
    for (const auto &branch : multi.branches)
        for (int64_t i = 0; i < summed.size(); ++i)
            summed.data[i] += branch[0].kernel.value().data[i];
    MSConvSNPLayer<double> single;
    single.branches = {{ConvStage<double>{pointwise(2, 3), Var<double>(summed, true)}}};
    single.bias = Var<double>(Tensor4<double>(1, 2, 1, 1), true);

    auto x = Var<double>(random_tensor<double>(1, 3, 5, 5, rng));
    auto upstream = random_tensor<double>(1, 2, 5, 5, rng);

    Tape<double> t1;
    auto y1 = multi.forward(&t1, x);
    y1.grad().data = upstream.data;
    t1.backward();

    Tape<double> t2;
    auto y2 = single.forward(&t2, x);
    y2.grad().data = upstream.data;
    t2.backward();

    for (int64_t i = 0; i < 2; ++i)
        EXPECT_DOUBLE_EQ(multi.bias.grad().data[i], single.bias.grad().data[i]);
}

TEST(MSConvSNP, LinearOverBranches) {
    std::mt19937_64 rng(61);
    ParamStore<double> ps;
    ParamInit<double> init(10);
    auto both = make_msconv_snp(ps, "both",
                                {{pointwise(2, 2)}, {pointwise(2, 2)}},
                                Activation::relu, init);
    MSConvSNPLayer<double> first;
    first.branches = {both.branches[0]};
    first.bias = Var<double>(Tensor4<double>(1, 2, 1, 1), true);
    MSConvSNPLayer<double> second;
    second.branches = {both.branches[1]};
    second.bias = Var<double>(Tensor4<double>(1, 2, 1, 1), true);

    auto x = Var<double>(random_tensor<double>(1, 2, 6, 6, rng));
    auto y = both.forward(nullptr, x); // zero bias: y == sum of branch outputs
    auto y1 = first.forward(nullptr, x);
    auto y2 = second.forward(nullptr, x);
    Tensor4<double> recombined(y1.value().n, y1.value().c, y1.value().h, y1.value().w);
    for (int64_t i = 0; i < recombined.size(); ++i)
        recombined.data[i] = y1.value().data[i] + y2.value().data[i];
    EXPECT_LT(max_rel_diff(y.value(), recombined), 1e-6);
}

TEST(MSConvSNP, BranchShapeDisagreementRejected) {
    MSConvSNPLayer<double> l;
    ConvSpec a = pointwise(1, 2);
    ConvSpec b = pointwise(1, 2);
    b.kh = 2; // shrinks the output
    l.branches = {
        {ConvStage<double>{a, Var<double>(Tensor4<double>(1, 2, 1, 1, 1.0), true)}},
        {ConvStage<double>{b, Var<double>(Tensor4<double>(1, 2, 2, 1, 1.0), true)}}};
    l.bias = Var<double>(Tensor4<double>::scalar(0.0), true);
    EXPECT_THROW(l.forward(nullptr, Var<double>(Tensor4<double>(1, 2, 4, 4, 1.0))),
                 ShapeError);
}

TEST(MSConvSNP, ChainedStagesGradCheck) {
    // Two-stage branches of asymmetric kernels, the SLP shape.
    std::mt19937_64 rng(71);
    ConvSpec s31 = pointwise(2, 2);
    s31.kh = 3;
    s31.ph = 1;
    s31.groups = 2;
    s31.in_channels_per_group = 2;
    ConvSpec s13 = pointwise(4, 1);
    s13.kw = 3;
    s13.pw = 1;
    s13.groups = 2;
    s13.in_channels_per_group = 1;

    ParamStore<double> ps;
    ParamInit<double> init(12);
    auto layer = make_msconv_snp(ps, "dw", {{s31, s13}, {s31, s13}},
                                 Activation::relu, init);

    std::vector<Var<double>> in = {Var<double>(random_tensor<double>(1, 4, 5, 5, rng), true)};
    for (const auto &e : ps.entries()) in.push_back(e.var);
    auto rep = grad_check(
        [&](Tape<double> *t, std::vector<Var<double>> &v) {
            return sum_all(t, layer.forward(t, v[0]));
        },
        in);
    EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(ConvSNP, GradCheck) {
    std::mt19937_64 rng(81);
    ParamStore<double> ps;
    ParamInit<double> init(13);
    ConvSpec sp = pointwise(3, 2);
    sp.kh = sp.kw = 3;
    sp.ph = sp.pw = 1;
    auto layer = make_conv_snp(ps, "snp", sp, Activation::relu, init);
    auto x = random_tensor<double>(2, 2, 5, 5, rng);
    for (auto &v : x.data)
        if (std::abs(v) < 0.05) v += 0.1; // keep relu kinks out of the sweep
    std::vector<Var<double>> in = {Var<double>(x, true), layer.kernel, layer.bias};
    auto rep = grad_check(
        [&](Tape<double> *t, std::vector<Var<double>> &v) {
            return sum_all(t, layer.forward(t, v[0]));
        },
        in);
    EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
}
