#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "slpnet/trainer.hpp"

using namespace slpnet;
namespace fs = std::filesystem;

namespace {

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string &tag) {
        root = fs::path(::testing::TempDir()) / ("slpnet_trainer_" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

ParamStore<float> single_param(float value, bool decay = true) {
    ParamStore<float> ps;
    ps.add("theta", Tensor4<float>::scalar(value), decay);
    return ps;
}

std::string make_synth(const TempTree &tmp, int count, int size, uint64_t seed) {
    SynthConfig sc;
    sc.out_dir = (tmp.root / "data").string();
    sc.count = count;
    sc.size = size;
    sc.seed = seed;
    generate_synthetic_dataset(sc);
    return sc.out_dir;
}

std::vector<uint8_t> file_bytes(const fs::path &p) {
    std::ifstream f(p, std::ios::binary);
    EXPECT_TRUE(bool(f)) << p;
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
}

ModelConfig tiny_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.stage_widths = {4, 8, 12, 16};
    cfg.input_h = cfg.input_w = 16;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
    auto ps = single_param(1.f);
    ps.entries()[0].var.grad().data[0] = 1.f;
    OptimConfig oc;
    oc.weight_decay = 0;
    Adam<float> opt(oc, ps);
    opt.step(ps);
    // mhat = vhat = 1 at step 1: update magnitude is exactly lr/(1+eps)
    EXPECT_NEAR(ps.entries()[0].var.value().data[0], 1.f - 1e-3f, 1e-6f);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ZeroGradientZeroDecayIsIdentity) {
    auto ps = single_param(0.75f);
    ps.entries()[0].var.grad().data[0] = 0.f;
    OptimConfig oc;
    oc.weight_decay = 0;
    Adam<float> opt(oc, ps);
    opt.step(ps);
    EXPECT_EQ(ps.entries()[0].var.value().data[0], 0.75f);
}

TEST(Adam, CoupledDecayActsThroughTheGradient) {
    auto ps = single_param(1.f);
    ps.entries()[0].var.grad().data[0] = 0.f;
    OptimConfig oc; // wd = 1e-4 default, coupled
    Adam<float> opt(oc, ps);
    opt.step(ps);
    // effective gradient 1e-4: Adam normalizes it to a ~lr-sized step
    EXPECT_NEAR(ps.entries()[0].var.value().data[0], 1.f - 1e-3f, 1e-5f);
}

TEST(Adam, NoDecayEntriesAreExcluded) {
    auto ps = single_param(1.f, /*decay=*/false);
    ps.entries()[0].var.grad().data[0] = 0.f;
    OptimConfig oc;
    Adam<float> opt(oc, ps);
    opt.step(ps);
    EXPECT_EQ(ps.entries()[0].var.value().data[0], 1.f);
}

TEST(Adam, MissingGradientRejected) {
    auto ps = single_param(1.f);
    OptimConfig oc;
    Adam<float> opt(oc, ps);
    EXPECT_THROW(opt.step(ps), ValueError);
}

TEST(Train, StepCountMatchesBatchArithmetic) {
    TempTree tmp("steps");
    const std::string data_root = make_synth(tmp, 40, 32, 1);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 16;
    auto ds = Dataset::discover(dc);

    auto model = build_model<float>(tiny_config(3));
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 20;
    tc.seed = 3;
    tc.out_dir = (tmp.root / "run").string();
    auto report = train(model, ds, ds.ids(), {}, tc);
    EXPECT_EQ(report.optimizer_steps, 2);
    EXPECT_EQ(report.epoch_loss.size(), 1u);
    EXPECT_EQ(report.final_checkpoint, tc.out_dir + "/checkpoint_final.ckpt");
    EXPECT_TRUE(fs::exists(tc.out_dir + "/train_report.txt"));
}

TEST(Train, CheckpointCadence) {
    TempTree tmp("cadence");
    const std::string data_root = make_synth(tmp, 2, 32, 21);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 16;
    auto ds = Dataset::discover(dc);

    auto model = build_model<float>(tiny_config(21));
    TrainConfig tc;
    tc.epochs = 25;
    tc.batch_size = 2;
    tc.seed = 21;
    tc.checkpoint_every = 10;
    tc.out_dir = (tmp.root / "run").string();
    auto report = train(model, ds, ds.ids(), {}, tc);
    EXPECT_TRUE(fs::exists(tc.out_dir + "/checkpoint_epoch_10.ckpt"));
    EXPECT_TRUE(fs::exists(tc.out_dir + "/checkpoint_epoch_20.ckpt"));
    EXPECT_TRUE(fs::exists(tc.out_dir + "/checkpoint_final.ckpt"));
    EXPECT_EQ(report.checkpoints.size(), 3u);
}

TEST(Train, FreshModelStartsNearMaximumEntropyLoss) {
    TempTree tmp("loss0");
    const std::string data_root = make_synth(tmp, 8, 64, 5);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 32;
    auto ds = Dataset::discover(dc);

    ModelConfig cfg; // default widths, head bias zero
    cfg.input_h = cfg.input_w = 32;
    cfg.seed = 11;
    auto model = build_model<float>(cfg);

    std::vector<SamplePair> pairs;
    for (const auto &id : ds.ids()) pairs.push_back(ds.load(id));
    Tape<float> tape;
    auto loss =
        bce_loss(&tape, model.forward(&tape, stack_images(pairs)), stack_masks(pairs));
    EXPECT_NEAR(loss.value().data[0], 0.6931, 0.15);
}

TEST(Train, DeterministicAcrossRuns) {
    TempTree tmp("determinism");
    const std::string data_root = make_synth(tmp, 4, 32, 7);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 16;
    auto ds = Dataset::discover(dc);

    auto run = [&](const std::string &dir) {
        auto model = build_model<float>(tiny_config(7));
        TrainConfig tc;
        tc.epochs = 2;
        tc.batch_size = 2;
        tc.seed = 7;
        tc.out_dir = (tmp.root / dir).string();
        train(model, ds, ds.ids(), {}, tc);
        return file_bytes(tmp.root / dir / "checkpoint_final.ckpt");
    };
    EXPECT_EQ(run("a"), run("b"));

    // reports differ only in the out-dir embedded in checkpoint paths
    auto report_without_paths = [&](const std::string &dir) {
        std::ifstream f(tmp.root / dir / "train_report.txt");
        std::string line, kept;
        while (std::getline(f, line))
            if (line.rfind("checkpoint", 0) != 0 && line.rfind("final_checkpoint", 0) != 0)
                kept += line + "\n";
        return kept;
    };
    EXPECT_EQ(report_without_paths("a"), report_without_paths("b"));
}

TEST(Train, CheckpointRoundTripReproducesForward) {
    TempTree tmp("roundtrip");
    const std::string data_root = make_synth(tmp, 4, 32, 9);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 16;
    auto ds = Dataset::discover(dc);

    auto model = build_model<float>(tiny_config(9));
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.seed = 9;
    tc.out_dir = (tmp.root / "run").string();
    train(model, ds, ds.ids(), {}, tc);

    auto restored = build_model<float>(read_checkpoint_config(tc.out_dir +
                                                              "/checkpoint_final.ckpt"));
    load_checkpoint(restored, tc.out_dir + "/checkpoint_final.ckpt");
    auto pair = ds.load(ds.ids()[0]);
    auto a = model.predict(pair.image);
    auto b = restored.predict(pair.image);
    for (int64_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.data[i], b.data[i]);
}

TEST(Train, LossTrendsDownOnTinyOverfit) {
    TempTree tmp("overfit");
    const std::string data_root = make_synth(tmp, 4, 64, 13);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 32;
    auto ds = Dataset::discover(dc);

    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 32;
    cfg.seed = 13;
    auto model = build_model<float>(cfg);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 4;
    tc.seed = 13;
    tc.checkpoint_every = 0;
    auto report = train(model, ds, ds.ids(), {}, tc);

    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
        head += report.epoch_loss[i];
        tail += report.epoch_loss[report.epoch_loss.size() - 1 - i];
    }
    EXPECT_LT(tail, head);
    for (double l : report.epoch_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Evaluate, OraclePredictorScoresPerfect) {
    TempTree tmp("eval");
    const std::string data_root = make_synth(tmp, 3, 32, 15);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 32;
    auto ds = Dataset::discover(dc);

    auto oracle = [](const SamplePair &p) { return p.mask; };
    auto report = evaluate_with(oracle, ds, ds.ids());
    EXPECT_DOUBLE_EQ(report.values.acc, 1.0);
    EXPECT_DOUBLE_EQ(report.values.dsc, 1.0);
    EXPECT_DOUBLE_EQ(report.values.ji, 1.0);
    EXPECT_EQ(report.images, 3u);

    // constant 0.5 output thresholds (strictly) to all-background
    auto half = [](const SamplePair &p) {
        return Tensor4<float>(1, 1, p.mask.h, p.mask.w, 0.5f);
    };
    auto flat = evaluate_with(half, ds, ds.ids());
    EXPECT_DOUBLE_EQ(flat.values.sens, 0.0);
    EXPECT_DOUBLE_EQ(flat.values.spec, 1.0);
    EXPECT_DOUBLE_EQ(flat.values.dsc, 0.0);
}

TEST(Evaluate, MultiCheckpointSummary) {
    TempTree tmp("multi");
    const std::string data_root = make_synth(tmp, 3, 32, 17);
    DataConfig dc;
    dc.root = data_root;
    dc.target_h = dc.target_w = 16;
    auto ds = Dataset::discover(dc);

    std::vector<std::string> paths;
    for (uint64_t seed : {21ull, 22ull, 23ull, 24ull}) {
        auto model = build_model<float>(tiny_config(seed));
        const std::string p = (tmp.root / ("m" + std::to_string(seed) + ".ckpt")).string();
        save_checkpoint(model, p);
        paths.push_back(p);
    }
    auto summary = evaluate_checkpoints(paths, ds, ds.ids());
    EXPECT_EQ(summary.runs, 4u);
    EXPECT_GE(summary.stddev.dsc, 0.0);
    std::ostringstream os;
    write_summary_kv(os, summary);
    EXPECT_NE(os.str().find("DSC_mean="), std::string::npos);
    EXPECT_NE(os.str().find("DSC_std="), std::string::npos);
    EXPECT_NE(os.str().find("runs=4"), std::string::npos);
}
