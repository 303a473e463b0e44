#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <vector>

#include "slpnet/tensor.hpp"

namespace slpnet {

struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    int64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts &operator+=(const ConfusionCounts &o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

/// Pixelwise tallies; the positive class (lesion) is 1. Inputs must be
/// strictly binary and same-shaped.
template <typename T>
ConfusionCounts confusion(const Tensor4<T> &pred, const Tensor4<T> &gt) {
    if (!pred.same_shape(gt))
        throw ShapeError("confusion: shape mismatch " + pred.shape_str() + " vs " +
                         gt.shape_str());
    ConfusionCounts c;
    for (int64_t i = 0; i < pred.size(); ++i) {
        const T p = pred.data[i], g = gt.data[i];
        if ((p != T(0) && p != T(1)) || (g != T(0) && g != T(1)))
            throw ValueError("confusion: masks must be strictly binary");
        if (p == T(1))
            g == T(1) ? ++c.tp : ++c.fp;
        else
            g == T(1) ? ++c.fn : ++c.tn;
    }
    return c;
}

/// The five ratios. `degenerate` is set when any denominator was zero and
/// the convention value (1 if the corresponding error count is zero, else 0)
/// was substituted.
struct MetricSet {
    double acc = 0, sens = 0, spec = 0, ji = 0, dsc = 0;
    bool degenerate = false;
};

inline MetricSet metrics(const ConfusionCounts &c) {
    MetricSet m;
    auto ratio = [&m](int64_t num, int64_t den, int64_t err) {
        if (den > 0) return double(num) / double(den);
        m.degenerate = true;
        return err == 0 ? 1.0 : 0.0;
    };
    m.acc = ratio(c.tp + c.tn, c.total(), c.fp + c.fn);
    m.sens = ratio(c.tp, c.tp + c.fn, c.fn);
    m.spec = ratio(c.tn, c.tn + c.fp, c.fp);
    m.ji = ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn);
    m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
    return m;
}

enum class Aggregation { per_image_mean, global };

struct MetricReport {
    MetricSet values;
    Aggregation mode = Aggregation::per_image_mean;
    size_t images = 0;
    size_t degenerate_images = 0;
};

/// per_image_mean (the default reporting mode) averages each metric over
/// images; global pools the confusion counts first.
inline MetricReport aggregate_metrics(const std::vector<ConfusionCounts> &per_image,
                                      Aggregation mode) {
    if (per_image.empty()) throw ValueError("aggregate_metrics: no images");
    MetricReport r;
    r.mode = mode;
    r.images = per_image.size();
    if (mode == Aggregation::global) {
        ConfusionCounts total;
        for (const auto &c : per_image) total += c;
        r.values = metrics(total);
        if (r.values.degenerate) r.degenerate_images = 1;
        return r;
    }
    for (const auto &c : per_image) {
        MetricSet m = metrics(c);
        r.values.acc += m.acc;
        r.values.sens += m.sens;
        r.values.spec += m.spec;
        r.values.ji += m.ji;
        r.values.dsc += m.dsc;
        if (m.degenerate) ++r.degenerate_images;
    }
    const double n = double(r.images);
    r.values.acc /= n;
    r.values.sens /= n;
    r.values.spec /= n;
    r.values.ji /= n;
    r.values.dsc /= n;
    r.values.degenerate = r.degenerate_images > 0;
    return r;
}

/// Mean and sample standard deviation across repeated runs (multi-seed
/// evaluation). One run reports a zero deviation.
struct MetricSummary {
    MetricSet mean;
    MetricSet stddev;
    size_t runs = 0;
};

inline MetricSummary summarize_runs(const std::vector<MetricSet> &runs) {
    if (runs.empty()) throw ValueError("summarize_runs: no runs");
    MetricSummary s;
    s.runs = runs.size();
    auto fold = [&](auto get, double &mean_out, double &std_out) {
        double mean = 0;
        for (const auto &r : runs) mean += get(r);
        mean /= double(runs.size());
        double var = 0;
        for (const auto &r : runs) var += (get(r) - mean) * (get(r) - mean);
        mean_out = mean;
        std_out = runs.size() > 1 ? std::sqrt(var / double(runs.size() - 1)) : 0.0;
    };
    fold([](const MetricSet &m) { return m.acc; }, s.mean.acc, s.stddev.acc);
    fold([](const MetricSet &m) { return m.sens; }, s.mean.sens, s.stddev.sens);
    fold([](const MetricSet &m) { return m.spec; }, s.mean.spec, s.stddev.spec);
    fold([](const MetricSet &m) { return m.ji; }, s.mean.ji, s.stddev.ji);
    fold([](const MetricSet &m) { return m.dsc; }, s.mean.dsc, s.stddev.dsc);
    return s;
}

/// Machine-readable form: one metric per line, percentages to 4 decimals.
inline void write_metrics_kv(std::ostream &os, const MetricReport &r) {
    auto line = [&os](const char *name, double v) {
        os << name << "=" << std::fixed << std::setprecision(4) << v * 100.0 << "\n";
    };
    line("Acc", r.values.acc);
    line("Sens", r.values.sens);
    line("Spec", r.values.spec);
    line("JI", r.values.ji);
    line("DSC", r.values.dsc);
    os << "images=" << r.images << "\n";
    os << "aggregation=" << (r.mode == Aggregation::global ? "global" : "per-image") << "\n";
    os << "degenerate_images=" << r.degenerate_images << "\n";
}

inline void write_summary_kv(std::ostream &os, const MetricSummary &s) {
    auto line = [&os](const char *name, double mean, double sd) {
        os << name << "_mean=" << std::fixed << std::setprecision(4) << mean * 100.0
           << "\n"
           << name << "_std=" << std::fixed << std::setprecision(4) << sd * 100.0 << "\n";
    };
    line("Acc", s.mean.acc, s.stddev.acc);
    line("Sens", s.mean.sens, s.stddev.sens);
    line("Spec", s.mean.spec, s.stddev.spec);
    line("JI", s.mean.ji, s.stddev.ji);
    line("DSC", s.mean.dsc, s.stddev.dsc);
    os << "runs=" << s.runs << "\n";
}

/// Strict threshold: probability > thr maps to 1, else 0.
template <typename T>
Tensor4<T> binarize(const Tensor4<T> &prob, T thr = T(0.5)) {
    Tensor4<T> out(prob.n, prob.c, prob.h, prob.w);
    for (int64_t i = 0; i < prob.size(); ++i)
        out.data[i] = prob.data[i] > thr ? T(1) : T(0);
    return out;
}

} // namespace slpnet
