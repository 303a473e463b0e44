#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "slpnet/checkpoint.hpp"
#include "slpnet/data.hpp"
#include "slpnet/metrics.hpp"
#include "slpnet/model.hpp"

namespace slpnet {

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    bool decoupled_decay = false; // default: classic coupled L2 (added to the gradient)
};

/// Bias-corrected Adam. Weight decay is coupled into the gradient by
/// default; entries flagged decay=false (PReLU slopes) are never decayed.
template <typename T>
class Adam {
public:
    Adam(const OptimConfig &cfg, const ParamStore<T> &params) : cfg_(cfg) {
        for (const auto &e : params.entries()) {
            const auto &v = e.var.value();
            m_.emplace_back(v.n, v.c, v.h, v.w);
            v_.emplace_back(v.n, v.c, v.h, v.w);
        }
    }

    int64_t steps() const { return step_; }

    void step(ParamStore<T> &params) {
        if (params.entries().size() != m_.size())
            throw ValueError("adam: parameter store changed size");
        ++step_;
        const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, double(step_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, double(step_)));
        const T lr = static_cast<T>(cfg_.lr), b1 = static_cast<T>(cfg_.beta1),
                b2 = static_cast<T>(cfg_.beta2), eps = static_cast<T>(cfg_.eps),
                wd = static_cast<T>(cfg_.weight_decay);
        for (size_t p = 0; p < m_.size(); ++p) {
            auto &e = params.entries()[p];
            auto node = e.var.node();
            if (!node->grad.same_shape(node->value))
                throw ValueError("adam: missing gradient for " + e.name);
            Tensor4<T> &theta = node->value;
            const Tensor4<T> &grad = node->grad;
            const bool decay = e.decay && wd != T(0);
            for (int64_t i = 0; i < theta.size(); ++i) {
                T g = grad.data[i];
                if (decay && !cfg_.decoupled_decay) g += wd * theta.data[i];
                m_[p].data[i] = b1 * m_[p].data[i] + (T(1) - b1) * g;
                v_[p].data[i] = b2 * v_[p].data[i] + (T(1) - b2) * g * g;
                const T mhat = m_[p].data[i] / bc1;
                const T vhat = v_[p].data[i] / bc2;
                theta.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                if (decay && cfg_.decoupled_decay) theta.data[i] -= lr * wd * theta.data[i];
            }
        }
    }

private:
    OptimConfig cfg_;
    int64_t step_ = 0;
    std::vector<Tensor4<T>> m_, v_;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 20;
    OptimConfig optim;
    uint64_t seed = 0;
    int checkpoint_every = 10;
    std::string out_dir;
    bool augment = true;
    bool combined_dice = false; // adds a soft-Dice term to the BCE loss
};

struct TrainReport {
    std::vector<double> epoch_loss;    // mean loss per epoch, from 1
    std::vector<double> epoch_seconds; // wall time; log-file material only
    int64_t optimizer_steps = 0;
    std::vector<std::string> checkpoints;
    std::string final_checkpoint;
    MetricReport eval;
    bool has_eval = false;
};

/// Deterministic artifact: no timestamps or timings (those live in the log).
inline void write_train_report_kv(std::ostream &os, const TrainReport &r,
                                  const TrainConfig &cfg) {
    os << "epochs=" << cfg.epochs << "\n";
    os << "batch_size=" << cfg.batch_size << "\n";
    os << std::setprecision(10);
    os << "lr=" << cfg.optim.lr << "\n";
    os << "weight_decay=" << cfg.optim.weight_decay << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "augment=" << (cfg.augment ? 1 : 0) << "\n";
    os << "loss=" << (cfg.combined_dice ? "bce+dice" : "bce") << "\n";
    os << "optimizer_steps=" << r.optimizer_steps << "\n";
    os << std::fixed << std::setprecision(6);
    for (size_t i = 0; i < r.epoch_loss.size(); ++i)
        os << "epoch_" << (i + 1) << "_loss=" << r.epoch_loss[i] << "\n";
    if (!r.epoch_loss.empty()) os << "final_loss=" << r.epoch_loss.back() << "\n";
    for (const auto &c : r.checkpoints) os << "checkpoint=" << c << "\n";
    os << "final_checkpoint=" << r.final_checkpoint << "\n";
    if (r.has_eval) write_metrics_kv(os, r.eval);
}

/// Binarize-at-0.5 evaluation of an arbitrary predictor over a split.
inline MetricReport
evaluate_with(const std::function<Tensor4<float>(const SamplePair &)> &predictor,
              const Dataset &data, const std::vector<std::string> &ids,
              Aggregation mode = Aggregation::per_image_mean) {
    if (ids.empty()) throw ValueError("evaluate: empty split");
    std::vector<ConfusionCounts> per_image;
    per_image.reserve(ids.size());
    for (const auto &id : ids) {
        SamplePair pair = data.load(id);
        Tensor4<float> prob = predictor(pair);
        per_image.push_back(confusion(binarize(prob), pair.mask));
    }
    return aggregate_metrics(per_image, mode);
}

inline MetricReport evaluate(const Model<float> &model, const Dataset &data,
                             const std::vector<std::string> &ids,
                             Aggregation mode = Aggregation::per_image_mean) {
    return evaluate_with(
        [&model](const SamplePair &p) { return model.predict(p.image); }, data, ids, mode);
}

/// Multi-seed reporting: evaluate each checkpoint and summarize mean +-
/// sample standard deviation per metric.
inline MetricSummary evaluate_checkpoints(const std::vector<std::string> &checkpoint_paths,
                                          const Dataset &data,
                                          const std::vector<std::string> &ids,
                                          Aggregation mode = Aggregation::per_image_mean) {
    if (checkpoint_paths.empty()) throw ValueError("evaluate: no checkpoints");
    std::vector<MetricSet> runs;
    for (const auto &path : checkpoint_paths) {
        auto model = build_model<float>(read_checkpoint_config(path));
        load_checkpoint(model, path);
        runs.push_back(evaluate(model, data, ids, mode).values);
    }
    return summarize_runs(runs);
}

/// Optimization loop: epochs x batches of BCE backward + Adam, checkpoints
/// every `checkpoint_every` epochs and at the end, optional evaluation on a
/// held-out split. Aborts with a diagnostic on non-finite loss.
inline TrainReport train(Model<float> &model, const Dataset &data,
                         const std::vector<std::string> &train_ids,
                         const std::vector<std::string> &eval_ids, const TrainConfig &cfg,
                         std::ostream *log = nullptr) {
    if (train_ids.empty()) throw ValueError("train: empty training split");
    if (cfg.epochs < 1) throw ValueError("train: epochs must be >= 1");
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

    Adam<float> optimizer(cfg.optim, model.params);
    TrainReport report;

    auto checkpoint_path = [&cfg](const std::string &tag) {
        return (std::filesystem::path(cfg.out_dir) / ("checkpoint_" + tag + ".ckpt"))
            .string();
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0;
        int64_t sample_count = 0;

        for (const auto &batch : epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch)) {
            std::vector<SamplePair> pairs;
            pairs.reserve(batch.size());
            for (const auto &id : batch)
                pairs.push_back(cfg.augment ? data.load_augmented(id, cfg.seed, epoch)
                                            : data.load(id));
            Tensor4<float> images = stack_images(pairs);
            Tensor4<float> masks = stack_masks(pairs);

            Tape<float> tape;
            Var<float> prob = model.forward(&tape, images);
            Var<float> loss = bce_loss(&tape, prob, masks);
            if (cfg.combined_dice) loss = add(&tape, loss, dice_loss(&tape, prob, masks));

            const double loss_value = loss.value().data[0];
            if (!std::isfinite(loss_value))
                throw ValueError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(optimizer.steps() + 1));

            model.params.zero_grads();
            tape.backward(loss);
            optimizer.step(model.params);

            loss_sum += loss_value * double(batch.size());
            sample_count += int64_t(batch.size());
        }

        const double epoch_loss = loss_sum / double(sample_count);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epoch_loss.push_back(epoch_loss);
        report.epoch_seconds.push_back(seconds);
        report.optimizer_steps = optimizer.steps();

        if (log)
            *log << "epoch " << epoch << "/" << cfg.epochs << "  loss " << std::fixed
                 << std::setprecision(6) << epoch_loss << "  (" << std::setprecision(2)
                 << seconds << "s)" << std::endl;

        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
            const std::string path = checkpoint_path("epoch_" + std::to_string(epoch));
            save_checkpoint(model, path);
            report.checkpoints.push_back(path);
        }
    }

    if (!cfg.out_dir.empty()) {
        report.final_checkpoint = checkpoint_path("final");
        save_checkpoint(model, report.final_checkpoint);
        report.checkpoints.push_back(report.final_checkpoint);
    }

    if (!eval_ids.empty()) {
        report.eval = evaluate(model, data, eval_ids);
        report.has_eval = true;
        if (log) {
            *log << "eval on " << eval_ids.size() << " images: DSC " << std::fixed
                 << std::setprecision(4) << report.eval.values.dsc * 100.0 << ", JI "
                 << report.eval.values.ji * 100.0 << std::endl;
        }
    }

    if (!cfg.out_dir.empty()) {
        std::ofstream rf(std::filesystem::path(cfg.out_dir) / "train_report.txt");
        write_train_report_kv(rf, report, cfg);
    }
    return report;
}

} // namespace slpnet
