// slpnet command line: train / eval / predict / analyze / bench / gen-synth.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slpnet/analyze.hpp"
#include "slpnet/checkpoint.hpp"
#include "slpnet/data.hpp"
#include "slpnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace slpnet;

namespace {

// exit codes: 0 ok, 2 unknown flag, 3 missing required flag, 4 unreadable
// path / io, 5 invalid data or config, 6 internal
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitMissingFlag = 3;
constexpr int kExitIo = 4;
constexpr int kExitInvalid = 5;
constexpr int kExitInternal = 6;

struct TeeBuf : std::streambuf {
    std::streambuf *a, *b;
    TeeBuf(std::streambuf *a_, std::streambuf *b_) : a(a_), b(b_) {}
    int overflow(int c) override {
        if (c != EOF) {
            a->sputc(char(c));
            b->sputc(char(c));
        }
        return c;
    }
    int sync() override {
        a->pubsync();
        b->pubsync();
        return 0;
    }
};

struct DataFlags {
    std::string root;
    std::string image_dir = "images";
    std::string mask_dir = "masks";
    std::string mask_suffix = "_segmentation";
    int size = 224;

    void attach(CLI::App *cmd, bool size_flag = true) {
        cmd->add_option("--data-root", root, "dataset root directory")->required();
        cmd->add_option("--image-dir", image_dir, "image subdirectory");
        cmd->add_option("--mask-dir", mask_dir, "mask subdirectory");
        cmd->add_option("--mask-suffix", mask_suffix, "mask filename suffix");
        if (size_flag)
            cmd->add_option("--size", size, "network resolution (divisible by 8)");
    }

    DataConfig config() const {
        DataConfig dc;
        dc.root = root;
        dc.image_dir = image_dir;
        dc.mask_dir = mask_dir;
        dc.mask_suffix = mask_suffix;
        dc.target_h = dc.target_w = size;
        return dc;
    }
};

Model<float> model_from(const std::string &checkpoint, uint64_t seed, int size) {
    if (!checkpoint.empty()) {
        auto model = build_model<float>(read_checkpoint_config(checkpoint));
        load_checkpoint(model, checkpoint);
        return model;
    }
    ModelConfig cfg;
    cfg.seed = seed;
    cfg.input_h = cfg.input_w = size;
    return build_model<float>(cfg);
}

std::vector<std::string> resolve_split(const Dataset &ds, const std::string &file,
                                       bool train_side) {
    if (!file.empty()) return read_id_list(file);
    auto split = default_split(ds.ids());
    return train_side ? split.train_ids : split.test_ids;
}

int cmd_train(const DataFlags &data, const std::string &split_train,
              const std::string &split_test, TrainConfig tc, uint64_t model_seed) {
    auto ds = Dataset::discover(data.config());
    auto train_ids = resolve_split(ds, split_train, true);
    auto test_ids = resolve_split(ds, split_test, false);

    ModelConfig mc;
    mc.seed = model_seed;
    mc.input_h = mc.input_w = data.size;
    auto model = build_model<float>(mc);

    fs::create_directories(tc.out_dir);
    std::ofstream logfile(fs::path(tc.out_dir) / "train.log");
    TeeBuf tee(std::cout.rdbuf(), logfile.rdbuf());
    std::ostream log(&tee);
    log << "training on " << train_ids.size() << " images, eval on " << test_ids.size()
        << ", " << tc.epochs << " epochs, batch " << tc.batch_size << ", size "
        << data.size << std::endl;

    auto report = train(model, ds, train_ids, test_ids, tc, &log);
    log << "final loss " << report.epoch_loss.back() << ", checkpoint "
        << report.final_checkpoint << std::endl;
    return kExitOk;
}

int cmd_eval(const DataFlags &data, const std::vector<std::string> &checkpoints,
             const std::string &split_test, const std::string &agg,
             const std::string &out_file) {
    auto ds = Dataset::discover(data.config());
    auto ids = resolve_split(ds, split_test, false);
    const Aggregation mode =
        agg == "global" ? Aggregation::global : Aggregation::per_image_mean;

    std::ostringstream kv;
    if (checkpoints.size() == 1) {
        auto model = model_from(checkpoints[0], 0, data.size);
        auto report = evaluate(model, ds, ids, mode);
        write_metrics_kv(kv, report);
    } else {
        auto summary = evaluate_checkpoints(checkpoints, ds, ids, mode);
        write_summary_kv(kv, summary);
        auto line = [&](const char *name, double mean, double sd) {
            std::cout << name << " " << std::fixed << std::setprecision(2) << mean * 100
                      << " ± " << sd * 100 << "\n";
        };
        line("Acc ", summary.mean.acc, summary.stddev.acc);
        line("Sens", summary.mean.sens, summary.stddev.sens);
        line("Spec", summary.mean.spec, summary.stddev.spec);
        line("JI  ", summary.mean.ji, summary.stddev.ji);
        line("DSC ", summary.mean.dsc, summary.stddev.dsc);
    }
    std::cout << kv.str();
    if (!out_file.empty()) {
        std::ofstream f(out_file);
        if (!f) throw IoError("eval: cannot write " + out_file);
        f << kv.str();
    }
    return kExitOk;
}

int cmd_predict(const std::string &checkpoint, const std::string &input,
                const std::string &out_dir, uint64_t seed, int size) {
    auto model = model_from(checkpoint, seed, size);
    const int net_h = model.config.input_h, net_w = model.config.input_w;

    std::vector<fs::path> inputs;
    if (fs::is_directory(input)) {
        for (const auto &e : fs::directory_iterator(input)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
                inputs.push_back(e.path());
        }
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty()) throw IoError("predict: no images under " + input);
    } else if (fs::is_regular_file(input)) {
        inputs.push_back(input);
    } else {
        throw IoError("predict: input not found: " + input);
    }

    fs::create_directories(out_dir);
    for (const auto &path : inputs) {
        auto native = load_image_rgb(path.string());
        auto prob = model.predict(resize_bilinear(native, net_h, net_w));
        auto mask = resize_nearest(binarize(prob), native.h, native.w);
        const fs::path out = fs::path(out_dir) / (path.stem().string() + "_pred.png");
        save_mask(out.string(), mask);
        std::cout << out.string() << std::endl;
    }
    return kExitOk;
}

int cmd_analyze(const std::string &checkpoint, int size, const std::string &out_file) {
    auto model = model_from(checkpoint, 0, size);
    auto report = analyze(model, size, size);
    write_analyze_table(std::cout, report);
    if (!out_file.empty()) {
        std::ofstream f(out_file);
        if (!f) throw IoError("analyze: cannot write " + out_file);
        write_analyze_kv(f, report);
    }
    return kExitOk;
}

int cmd_bench(const std::string &checkpoint, int size, int iters, int warmup, int parallel,
              uint64_t seed, const std::string &out_file) {
    auto model = model_from(checkpoint, seed, size);
    BenchResult r;
    if (parallel == 1)
        r = bench_fps(model, size, size, warmup, iters, seed + 1);
    else
        r = bench_fps_parallel<float>(model.config, parallel, size, size, warmup, iters,
                                      seed + 1);
    std::ostringstream kv;
    write_bench_kv(kv, r, analyze(model, size, size), seed, parallel);
    std::cout << kv.str();
    if (!out_file.empty()) {
        std::ofstream f(out_file);
        if (!f) throw IoError("bench: cannot write " + out_file);
        f << kv.str();
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"SLP-Net: ultra-lightweight multi-scale skin lesion segmentation"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "key=value config file with a [subcommand] section per command "
                   "(flags take precedence)");

    // train
    auto *train_cmd = app.add_subcommand("train", "train a model");
    DataFlags train_data;
    train_data.attach(train_cmd);
    TrainConfig tc;
    uint64_t train_seed = 0;
    std::string split_train_file, split_test_file;
    train_cmd->add_option("--epochs", tc.epochs, "training epochs");
    train_cmd->add_option("--batch", tc.batch_size, "batch size");
    train_cmd->add_option("--lr", tc.optim.lr, "Adam learning rate");
    train_cmd->add_option("--wd", tc.optim.weight_decay, "weight decay");
    train_cmd->add_option("--seed", train_seed, "seed for init, shuffling, augmentation");
    train_cmd->add_option("--out-dir", tc.out_dir, "output directory")->required();
    train_cmd->add_option("--split-train", split_train_file, "train id list file");
    train_cmd->add_option("--split-test", split_test_file, "test id list file");
    train_cmd->add_option("--checkpoint-every", tc.checkpoint_every,
                          "checkpoint cadence in epochs (0 = final only)");
    train_cmd->add_flag("--combined-dice-loss", tc.combined_dice,
                        "optimize BCE plus soft Dice");
    train_cmd->add_flag("--decoupled-wd", tc.optim.decoupled_decay,
                        "decoupled weight decay instead of coupled L2");
    bool no_augment = false;
    train_cmd->add_flag("--no-augment", no_augment,
                        "disable load-time flip/rotate augmentation");

    // eval
    auto *eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on a split");
    DataFlags eval_data;
    eval_data.attach(eval_cmd);
    std::vector<std::string> eval_ckpts;
    std::string eval_split_file, eval_agg = "per-image", eval_out;
    eval_cmd->add_option("--checkpoint", eval_ckpts, "checkpoint file (repeatable)")
        ->required();
    eval_cmd->add_option("--split-test", eval_split_file, "id list file to evaluate");
    eval_cmd->add_option("--agg", eval_agg, "aggregation: per-image | global")
        ->check(CLI::IsMember({"per-image", "global"}));
    eval_cmd->add_option("--out", eval_out, "write metrics key-value file");

    // predict
    auto *pred_cmd = app.add_subcommand("predict", "write binary masks for images");
    std::string pred_ckpt, pred_input, pred_out;
    uint64_t pred_seed = 0;
    int pred_size = 224;
    pred_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint (fresh model if omitted)");
    pred_cmd->add_option("--input", pred_input, "image file or directory")->required();
    pred_cmd->add_option("--out", pred_out, "output directory")->required();
    pred_cmd->add_option("--seed", pred_seed, "seed when no checkpoint is given");
    pred_cmd->add_option("--size", pred_size, "network resolution when no checkpoint");

    // analyze
    auto *an_cmd = app.add_subcommand("analyze", "parameter and FLOP table");
    std::string an_ckpt, an_out;
    int an_size = 224;
    an_cmd->add_option("--size", an_size, "input resolution");
    an_cmd->add_option("--checkpoint", an_ckpt, "analyze this checkpoint's config");
    an_cmd->add_option("--out", an_out, "write key-value report");

    // bench
    auto *bench_cmd = app.add_subcommand("bench", "forward throughput benchmark");
    std::string bench_ckpt, bench_out;
    int bench_size = 224, bench_iters = 100, bench_warmup = 10, bench_parallel = 1;
    uint64_t bench_seed = 0;
    bench_cmd->add_option("--size", bench_size, "input resolution");
    bench_cmd->add_option("--iters", bench_iters, "timed iterations");
    bench_cmd->add_option("--warmup", bench_warmup, "untimed warmup iterations");
    bench_cmd->add_option("--checkpoint", bench_ckpt, "bench this checkpoint's config");
    bench_cmd->add_option("--parallel", bench_parallel,
                          "independent model instances timed concurrently");
    bench_cmd->add_option("--seed", bench_seed, "input/model seed");
    bench_cmd->add_option("--out", bench_out, "write key-value report");

    // gen-synth
    auto *synth_cmd = app.add_subcommand("gen-synth", "emit the synthetic circle dataset");
    SynthConfig sc;
    synth_cmd->add_option("--out", sc.out_dir, "output dataset root")->required();
    synth_cmd->add_option("--count", sc.count, "number of images");
    synth_cmd->add_option("--seed", sc.seed, "generator seed");
    synth_cmd->add_option("--size", sc.size, "image size in pixels");

    for (auto *cmd : app.get_subcommands({})) cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error[usage]: " << e.what() << std::endl;
        return std::string(e.get_name()) == "RequiredError" ? kExitMissingFlag : kExitUsage;
    }

    try {
        if (*train_cmd) {
            tc.seed = train_seed;
            tc.augment = !no_augment;
            return cmd_train(train_data, split_train_file, split_test_file, tc, train_seed);
        }
        if (*eval_cmd)
            return cmd_eval(eval_data, eval_ckpts, eval_split_file, eval_agg, eval_out);
        if (*pred_cmd)
            return cmd_predict(pred_ckpt, pred_input, pred_out, pred_seed, pred_size);
        if (*an_cmd) return cmd_analyze(an_ckpt, an_size, an_out);
        if (*bench_cmd)
            return cmd_bench(bench_ckpt, bench_size, bench_iters, bench_warmup,
                             bench_parallel, bench_seed, bench_out);
        if (*synth_cmd) {
            auto ids = generate_synthetic_dataset(sc);
            std::cout << "wrote " << ids.size() << " image/mask pairs under " << sc.out_dir
                      << std::endl;
            return kExitOk;
        }
    } catch (const IoError &e) {
        std::cerr << "error[io]: " << e.what() << std::endl;
        return kExitIo;
    } catch (const ShapeError &e) {
        std::cerr << "error[shape]: " << e.what() << std::endl;
        return kExitInvalid;
    } catch (const ValueError &e) {
        std::cerr << "error[value]: " << e.what() << std::endl;
        return kExitInvalid;
    } catch (const std::exception &e) {
        std::cerr << "error[internal]: " << e.what() << std::endl;
        return kExitInternal;
    }
    return kExitInternal;
}
