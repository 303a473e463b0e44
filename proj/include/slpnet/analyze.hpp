#pragma once

#include <chrono>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "slpnet/model.hpp"

namespace slpnet {

#if defined(__clang__)
inline const char *const kBuildInfo = "clang " __clang_version__;
#elif defined(__GNUC__)
inline const char *const kBuildInfo = "gcc " __VERSION__;
#else
inline const char *const kBuildInfo = "unknown-compiler";
#endif

/// 2 FLOPs per multiply-add; out_elems * in_channels_per_group * kh * kw MACs.
inline double conv2d_flops(const ConvSpec &sp, int out_h, int out_w) {
    return 2.0 * double(sp.out_channels) * out_h * out_w *
           double(sp.in_channels_per_group) * sp.kh * sp.kw;
}

struct ModuleStat {
    std::string name;
    int64_t params = 0;
    double conv_flops = 0;  // convolution MACs x2: scales exactly with area
    double other_flops = 0; // elementwise (1/elem), pool (3/out), upsample (8/out)
    double total_flops() const { return conv_flops + other_flops; }
};

struct AnalyzeReport {
    std::vector<ModuleStat> modules;
    int64_t total_params = 0;
    double params_mb = 0; // 4 bytes per parameter
    double total_flops = 0;
    int input_h = 0, input_w = 0;
};

/// Per-module parameter and FLOP table at batch 1. Pure function of the
/// model configuration; no tensor data is touched.
template <typename T>
AnalyzeReport analyze(const Model<T> &m, int input_h, int input_w) {
    if (input_h <= 0 || input_w <= 0 || input_h % 8 != 0 || input_w % 8 != 0)
        throw ValueError("analyze: input size must be positive and divisible by 8");
    AnalyzeReport rep;
    rep.input_h = input_h;
    rep.input_w = input_w;

    const auto &w = m.config.stage_widths;
    const double a1 = double(input_h) * input_w;       // full-resolution area
    const double a2 = a1 / 4, a4 = a1 / 16, a8 = a1 / 64;

    auto module = [&](const std::string &name, double conv, double other) {
        ModuleStat s;
        s.name = name;
        s.params = m.params.subtree_params(name);
        s.conv_flops = conv;
        s.other_flops = other;
        rep.modules.push_back(s);
    };

    // initblock: three 3x3 convolutions + relus at full resolution
    {
        double conv = 0;
        for (const auto &sp : m.init.specs) conv += conv2d_flops(sp, input_h, input_w);
        module("init", conv, 3.0 * w[0] * a1);
    }

    const SDSBlock<T> *sds[3] = {&m.sds1, &m.sds2, &m.sds3};
    const SLPBlock<T> *slp[3] = {&m.slp1, &m.slp2, &m.slp3};
    const double stage_area[3] = {a2, a4, a8};
    for (int i = 0; i < 3; ++i) {
        const double area = stage_area[i]; // output resolution of this stage
        const int oh = input_h >> (i + 1), ow = input_w >> (i + 1);
        {
            const auto &b = *sds[i];
            const double conv = conv2d_flops(b.conv_spec, oh, ow);
            const double relu = b.conv_spec.out_channels * area;
            const double pool = 3.0 * b.in_channels * area;
            module("sds" + std::to_string(i + 1), conv, relu + pool);
        }
        {
            const auto &b = *slp[i];
            const int two_n = b.channels;
            double conv = 0;
            for (const auto &branch : b.dw.branches)
                for (const auto &stage : branch) conv += conv2d_flops(stage.spec, oh, ow);
            conv += conv2d_flops(b.pw.spec, oh, ow);
            // input relu, 3 branch-sum adds, shared bias, pw relu, residual add
            const double elementwise = 7.0 * two_n * area;
            module("slp" + std::to_string(i + 1), conv, elementwise);
        }
    }

    module("us", 0.0, 8.0 * w[3] * a1); // x8 bilinear over the SLP3 map

    const SFABlock<T> *sfa[2] = {&m.sfa1, &m.sfa2};
    for (int i = 0; i < 2; ++i) {
        const auto &b = *sfa[i];
        const double area = stage_area[i];
        const int oh = input_h >> (i + 1), ow = input_w >> (i + 1);
        double conv = conv2d_flops(b.psi3_spec, oh, ow) + conv2d_flops(b.psi1_spec, oh, ow);
        const double prelu = b.channels * area;
        const double upsample = 8.0 * b.channels * area * b.upscale * b.upscale;
        module("sfa" + std::to_string(i + 1), conv, prelu + upsample);
    }

    module("head", conv2d_flops(m.head_spec, input_h, input_w), a1 /*sigmoid*/);
    module("pyramid", 0.0, 8.0 * 3.0 * (a2 + a4 + a8));

    for (const auto &s : rep.modules) {
        rep.total_params += s.params;
        rep.total_flops += s.total_flops();
    }
    rep.params_mb = double(rep.total_params) * 4.0 / (1024.0 * 1024.0);
    return rep;
}

inline void write_analyze_table(std::ostream &os, const AnalyzeReport &r) {
    os << "complexity at " << r.input_h << "x" << r.input_w
       << " (convolutions counted as 2 FLOPs per multiply-add)\n";
    os << std::left << std::setw(10) << "module" << std::right << std::setw(12) << "params"
       << std::setw(14) << "conv MFLOPs" << std::setw(14) << "other MFLOPs" << "\n";
    for (const auto &m : r.modules)
        os << std::left << std::setw(10) << m.name << std::right << std::setw(12) << m.params
           << std::setw(14) << std::fixed << std::setprecision(2) << m.conv_flops / 1e6
           << std::setw(14) << m.other_flops / 1e6 << "\n";
    os << std::left << std::setw(10) << "total" << std::right << std::setw(12)
       << r.total_params << std::setw(14) << std::fixed << std::setprecision(2)
       << r.total_flops / 1e6 << "\n";
    os << "params: " << r.total_params << " (" << std::fixed << std::setprecision(2)
       << r.total_params / 1e6 << "M, " << r.params_mb << " MB at 4 bytes each)\n";
    os << "GFLOPs: " << std::fixed << std::setprecision(3) << r.total_flops / 1e9 << "\n";
}

inline void write_analyze_kv(std::ostream &os, const AnalyzeReport &r) {
    os << "flops_convention=2_flops_per_mac\n";
    os << "input_size=" << r.input_h << "x" << r.input_w << "\n";
    os << "params=" << r.total_params << "\n";
    os << std::fixed << std::setprecision(4);
    os << "params_m=" << r.total_params / 1e6 << "\n";
    os << "params_mb=" << std::setprecision(2) << r.params_mb << "\n";
    os << "gflops=" << std::setprecision(4) << r.total_flops / 1e9 << "\n";
    for (const auto &m : r.modules) {
        os << "module." << m.name << ".params=" << m.params << "\n";
        os << "module." << m.name << ".conv_flops=" << std::setprecision(0) << m.conv_flops
           << "\n";
        os << "module." << m.name << ".other_flops=" << m.other_flops << "\n";
    }
}

struct BenchResult {
    double fps = 0;
    double mean_ms = 0, min_ms = 0, max_ms = 0;
    int iters = 0, warmup = 0;
    int input_h = 0, input_w = 0;
};

/// Timed single-image forwards; input generation and reporting stay outside
/// the timed section.
template <typename T>
BenchResult bench_fps(const Model<T> &m, int input_h, int input_w, int warmup = 10,
                      int iters = 100, uint64_t seed = 1234) {
    if (iters < 1) throw ValueError("bench: iters must be >= 1");
    Tensor4<T> img(1, 3, input_h, input_w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist{0.0, 1.0};
    for (auto &v : img.data) v = static_cast<T>(dist(rng));

    volatile T sink = T(0);
    for (int i = 0; i < warmup; ++i) sink = sink + m.predict(img).data[0];

    BenchResult r;
    r.iters = iters;
    r.warmup = warmup;
    r.input_h = input_h;
    r.input_w = input_w;
    r.min_ms = 1e300;
    double total_s = 0;
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink = sink + m.predict(img).data[0];
        const auto t1 = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(t1 - t0).count();
        total_s += s;
        r.min_ms = std::min(r.min_ms, s * 1e3);
        r.max_ms = std::max(r.max_ms, s * 1e3);
    }
    r.mean_ms = total_s * 1e3 / iters;
    r.fps = iters / total_s;
    return r;
}

/// N independent model instances (same config and seed) driven from N
/// threads; reports aggregate throughput. parallel = 1 is the plain
/// single-threaded measurement.
template <typename T>
BenchResult bench_fps_parallel(const ModelConfig &config, int parallel, int input_h,
                               int input_w, int warmup = 10, int iters = 100,
                               uint64_t seed = 1234) {
    if (parallel < 1) throw ValueError("bench: parallel must be >= 1");
    if (parallel == 1) {
        auto model = build_model<T>(config);
        return bench_fps(model, input_h, input_w, warmup, iters, seed);
    }
    std::vector<Model<T>> models;
    models.reserve(size_t(parallel));
    for (int i = 0; i < parallel; ++i) models.push_back(build_model<T>(config));

    std::vector<BenchResult> results(static_cast<size_t>(parallel));
    const auto t0 = std::chrono::steady_clock::now();
    {
        std::vector<std::thread> workers;
        for (int i = 0; i < parallel; ++i)
            workers.emplace_back([&, i] {
                results[size_t(i)] =
                    bench_fps(models[size_t(i)], input_h, input_w, warmup, iters,
                              seed + uint64_t(i));
            });
        for (auto &w : workers) w.join();
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    BenchResult agg;
    agg.iters = iters * parallel;
    agg.warmup = warmup;
    agg.input_h = input_h;
    agg.input_w = input_w;
    agg.fps = double(iters) * parallel / wall;
    agg.min_ms = results[0].min_ms;
    agg.max_ms = results[0].max_ms;
    for (const auto &r : results) {
        agg.mean_ms += r.mean_ms / parallel;
        agg.min_ms = std::min(agg.min_ms, r.min_ms);
        agg.max_ms = std::max(agg.max_ms, r.max_ms);
    }
    return agg;
}

inline void write_bench_kv(std::ostream &os, const BenchResult &r,
                           const AnalyzeReport &complexity, uint64_t seed,
                           int parallel = 1) {
    os << "params=" << complexity.total_params << "\n";
    os << std::fixed << std::setprecision(2);
    os << "params_mb=" << complexity.params_mb << "\n";
    os << "gflops=" << std::setprecision(4) << complexity.total_flops / 1e9 << "\n";
    os << "fps_mean=" << std::setprecision(2) << r.fps << "\n";
    os << "lat_ms_mean=" << std::setprecision(3) << r.mean_ms << "\n";
    os << "lat_ms_min=" << r.min_ms << "\n";
    os << "lat_ms_max=" << r.max_ms << "\n";
    os << "iters=" << r.iters << "\n";
    os << "warmup=" << r.warmup << "\n";
    os << "parallel=" << parallel << "\n";
    os << "input_size=" << r.input_h << "x" << r.input_w << "\n";
    os << "seed=" << seed << "\n";
    os << "build=" << kBuildInfo << "\n";
}

} // namespace slpnet
