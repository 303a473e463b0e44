// Integration tests driving the installed CLI binary end to end.
// The binary path arrives as argv[1] (see tests/CMakeLists.txt).

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "slpnet/image.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;

int run(const std::string &args) {
    const int status = std::system((g_cli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string kv_lookup(const fs::path &file, const std::string &key) {
    std::ifstream f(file);
    std::string line;
    while (std::getline(f, line))
        if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    return "";
}

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string &tag) {
        root = fs::path(::testing::TempDir()) / ("slpnet_cli_" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

} // namespace

TEST(Cli, ExitCodesAreDistinctPerFailureClass) {
    EXPECT_EQ(run("analyze --bogus-flag"), 2);          // unknown flag
    EXPECT_EQ(run("train --data-root /tmp"), 3);        // missing required flag
    EXPECT_EQ(run("eval --checkpoint /nonexistent.ckpt --data-root /nonexistent"), 4);
    EXPECT_EQ(run("analyze --size 100"), 5);            // not divisible by 8
    EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, AnalyzeWritesReport) {
    TempTree tmp("analyze");
    const fs::path kv = tmp.root / "an.kv";
    ASSERT_EQ(run("analyze --size 224 --out " + kv.string()), 0);
    EXPECT_EQ(kv_lookup(kv, "params"), "103802");
    EXPECT_EQ(kv_lookup(kv, "module.slp3.params"), "19712");
}

TEST(Cli, PredictFreshModelWritesNativeResolutionBinaryMask) {
    TempTree tmp("predict");
    // non-8-divisible native size: inference resizes to the model size and
    // the mask is resized back to native before writing
    slpnet::Tensor4<float> img(1, 3, 100, 140, 0.4f);
    for (int y = 30; y < 70; ++y)
        for (int x = 50; x < 90; ++x)
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = 0.9f;
    const fs::path in = tmp.root / "scene.png";
    slpnet::save_image_rgb(in.string(), img);

    const fs::path out_dir = tmp.root / "preds";
    ASSERT_EQ(run("predict --input " + in.string() + " --out " + out_dir.string() +
                  " --seed 3 --size 64"),
              0);
    cv::Mat mask = cv::imread((out_dir / "scene_pred.png").string(), cv::IMREAD_GRAYSCALE);
    ASSERT_FALSE(mask.empty());
    EXPECT_EQ(mask.rows, 100);
    EXPECT_EQ(mask.cols, 140);
    for (int y = 0; y < mask.rows; ++y)
        for (int x = 0; x < mask.cols; ++x) {
            const uint8_t v = mask.at<uint8_t>(y, x);
            ASSERT_TRUE(v == 0 || v == 255) << int(v);
        }
}

TEST(Cli, TrainOneEpochOnSynthEmitsArtifacts) {
    TempTree tmp("train");
    const fs::path synth = tmp.root / "synth";
    ASSERT_EQ(run("gen-synth --out " + synth.string() + " --count 8 --seed 5 --size 64"), 0);
    const fs::path run_dir = tmp.root / "run";
    ASSERT_EQ(run("train --data-root " + synth.string() +
                  " --epochs 1 --batch 4 --seed 5 --size 32 --out-dir " + run_dir.string()),
              0);
    EXPECT_TRUE(fs::exists(run_dir / "checkpoint_final.ckpt"));
    EXPECT_TRUE(fs::exists(run_dir / "train_report.txt"));
    EXPECT_TRUE(fs::exists(run_dir / "train.log"));
    EXPECT_EQ(kv_lookup(run_dir / "train_report.txt", "optimizer_steps"), "2");

    const fs::path metrics = tmp.root / "m.kv";
    ASSERT_EQ(run("eval --checkpoint " + (run_dir / "checkpoint_final.ckpt").string() +
                  " --data-root " + synth.string() + " --split-test " +
                  (synth / "ids.txt").string() + " --size 32 --out " + metrics.string()),
              0);
    EXPECT_FALSE(kv_lookup(metrics, "DSC").empty());
    EXPECT_EQ(kv_lookup(metrics, "images"), "8");
}

TEST(Cli, FlagsTakePrecedenceOverConfigFile) {
    TempTree tmp("config");
    const fs::path synth = tmp.root / "synth";
    ASSERT_EQ(run("gen-synth --out " + synth.string() + " --count 2 --seed 2 --size 64"), 0);
    const fs::path cfg = tmp.root / "cfg.ini";
    {
        std::ofstream f(cfg);
        f << "[train]\nepochs=2\nbatch=1\n";
    }
    const fs::path run_a = tmp.root / "a";
    ASSERT_EQ(run("train --config " + cfg.string() + " --data-root " + synth.string() +
                  " --size 32 --seed 1 --out-dir " + run_a.string()),
              0);
    EXPECT_EQ(kv_lookup(run_a / "train_report.txt", "epochs"), "2");

    const fs::path run_b = tmp.root / "b";
    ASSERT_EQ(run("train --config " + cfg.string() + " --data-root " + synth.string() +
                  " --size 32 --seed 1 --epochs 1 --out-dir " + run_b.string()),
              0);
    EXPECT_EQ(kv_lookup(run_b / "train_report.txt", "epochs"), "1");
}

TEST(Cli, BenchReportsSpecKeys) {
    TempTree tmp("bench");
    const fs::path kv = tmp.root / "b.kv";
    ASSERT_EQ(run("bench --size 32 --iters 2 --warmup 1 --out " + kv.string()), 0);
    for (const char *key : {"params", "params_mb", "gflops", "fps_mean", "lat_ms_mean",
                            "lat_ms_min", "lat_ms_max", "input_size", "seed", "build"})
        EXPECT_FALSE(kv_lookup(kv, key).empty()) << key;
}

int main(int argc, char **argv) {
    ::testing::InitGoogleTest(&argc, argv);
    if (argc < 2) {
        std::cerr << "usage: test_cli <path-to-slpnet-cli>\n";
        return 64;
    }
    g_cli = argv[1];
    return RUN_ALL_TESTS();
}
