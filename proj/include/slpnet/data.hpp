#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "slpnet/image.hpp"
#include "slpnet/resize.hpp"
#include "slpnet/tensor.hpp"

namespace slpnet {

/// One image/mask pair at a common resolution. Image in [0,1], mask in {0,1}.
struct SamplePair {
    Tensor4<float> image; // (1,3,H,W)
    Tensor4<float> mask;  // (1,1,H,W)
    std::string id;       // filename stem
};

struct DataConfig {
    std::string root;
    std::string image_dir = "images";
    std::string mask_dir = "masks";
    std::string mask_suffix = "_segmentation";
    int target_h = 224;
    int target_w = 224;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a(const std::string &s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

} // namespace detail

/// Seed for one sample's augmentation draws. A pure function of
/// (run seed, epoch, sample id), so prefetch order can never change results.
inline uint64_t derive_sample_seed(uint64_t seed, int epoch, const std::string &id) {
    return detail::splitmix64(detail::splitmix64(seed) ^
                              detail::splitmix64(uint64_t(epoch) + 0x51ED2701ull) ^
                              detail::fnv1a(id));
}

/// Load and resize one pair: bilinear for the image, nearest for the mask.
/// A target of 0 keeps native resolution (then both files must agree).
inline SamplePair load_pair(const std::string &image_path, const std::string &mask_path,
                            int target_h, int target_w, const std::string &id = "") {
    SamplePair p;
    p.id = id;
    p.image = load_image_rgb(image_path);
    p.mask = load_mask(mask_path);
    if (target_h > 0 && target_w > 0) {
        p.image = resize_bilinear(p.image, target_h, target_w);
        p.mask = resize_nearest(p.mask, target_h, target_w);
    } else if (p.image.h != p.mask.h || p.image.w != p.mask.w) {
        throw ShapeError("load_pair: image " + p.image.shape_str() + " and mask " +
                         p.mask.shape_str() + " sizes differ and no target size is set");
    }
    return p;
}

template <typename T>
Tensor4<T> flip_horizontal(const Tensor4<T> &x) {
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int xx = 0; xx < x.w; ++xx)
                    out.at(i, j, y, xx) = x.at(i, j, y, x.w - 1 - xx);
    return out;
}

template <typename T>
Tensor4<T> flip_vertical(const Tensor4<T> &x) {
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int xx = 0; xx < x.w; ++xx)
                    out.at(i, j, y, xx) = x.at(i, j, x.h - 1 - y, xx);
    return out;
}

/// 90 degrees clockwise; square inputs only.
template <typename T>
Tensor4<T> rotate90(const Tensor4<T> &x) {
    if (x.h != x.w) throw ShapeError("rotate90: input must be square");
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int xx = 0; xx < x.w; ++xx)
                    out.at(i, j, y, xx) = x.at(i, j, x.h - 1 - xx, y);
    return out;
}

/// Mask-safe augmentation: 50% horizontal flip, 50% vertical flip, then a
/// uniform rotation from {0,90,180,270} degrees, identical on image and
/// mask. Draw order is fixed (hflip, vflip, rotation).
inline SamplePair augment(const SamplePair &pair, std::mt19937_64 &rng) {
    if (pair.image.h != pair.image.w)
        throw ShapeError("augment: rotations need square inputs, got " +
                         pair.image.shape_str());
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> quarter{0, 3};
    const bool hflip = coin(rng);
    const bool vflip = coin(rng);
    const int turns = quarter(rng);

    SamplePair out;
    out.id = pair.id;
    out.image = pair.image;
    out.mask = pair.mask;
    if (hflip) {
        out.image = flip_horizontal(out.image);
        out.mask = flip_horizontal(out.mask);
    }
    if (vflip) {
        out.image = flip_vertical(out.image);
        out.mask = flip_vertical(out.mask);
    }
    for (int t = 0; t < turns; ++t) {
        out.image = rotate90(out.image);
        out.mask = rotate90(out.mask);
    }
    return out;
}

/// Image corpus on disk: <root>/<image_dir>/<id>.<ext> paired with
/// <root>/<mask_dir>/<id><mask_suffix>.<ext>.
class Dataset {
public:
    static Dataset discover(const DataConfig &cfg) {
        namespace fs = std::filesystem;
        Dataset ds;
        ds.cfg_ = cfg;
        const fs::path dir = fs::path(cfg.root) / cfg.image_dir;
        if (!fs::is_directory(dir))
            throw IoError("dataset: image directory not found: " + dir.string());
        for (const auto &entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
                ds.ids_.push_back(entry.path().stem().string());
        }
        if (ds.ids_.empty())
            throw IoError("dataset: no images under " + dir.string());
        std::sort(ds.ids_.begin(), ds.ids_.end());
        return ds;
    }

    const DataConfig &config() const { return cfg_; }
    const std::vector<std::string> &ids() const { return ids_; }

    std::string image_path(const std::string &id) const {
        namespace fs = std::filesystem;
        const fs::path dir = fs::path(cfg_.root) / cfg_.image_dir;
        for (const char *ext : {".png", ".jpg", ".jpeg", ".bmp"}) {
            fs::path p = dir / (id + ext);
            if (fs::exists(p)) return p.string();
        }
        throw IoError("dataset: no image file for id " + id);
    }

    std::string mask_path(const std::string &id) const {
        namespace fs = std::filesystem;
        const fs::path dir = fs::path(cfg_.root) / cfg_.mask_dir;
        for (const char *ext : {".png", ".jpg", ".jpeg", ".bmp"}) {
            fs::path p = dir / (id + cfg_.mask_suffix + ext);
            if (fs::exists(p)) return p.string();
        }
        throw IoError("dataset: no mask file for id " + id);
    }

    SamplePair load(const std::string &id) const {
        return load_pair(image_path(id), mask_path(id), cfg_.target_h, cfg_.target_w, id);
    }

    SamplePair load_augmented(const std::string &id, uint64_t seed, int epoch) const {
        std::mt19937_64 rng(derive_sample_seed(seed, epoch, id));
        return augment(load(id), rng);
    }

private:
    DataConfig cfg_;
    std::vector<std::string> ids_;
};

struct SplitSpec {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

/// First `train_count` of the lexicographically sorted corpus train, the
/// rest test. Corpus smaller than train_count trains on everything.
inline SplitSpec default_split(const std::vector<std::string> &sorted_ids,
                               size_t train_count = 2074) {
    SplitSpec s;
    const size_t cut = std::min(train_count, sorted_ids.size());
    s.train_ids.assign(sorted_ids.begin(), sorted_ids.begin() + cut);
    s.test_ids.assign(sorted_ids.begin() + cut, sorted_ids.end());
    return s;
}

/// Plain text, one id per line; blank lines ignored.
inline std::vector<std::string> read_id_list(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw IoError("split: cannot open " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

/// Epoch-deterministic shuffled batches; the final short batch is kept.
inline std::vector<std::vector<std::string>>
epoch_batches(const std::vector<std::string> &ids, int batch_size, uint64_t seed, int epoch) {
    if (ids.empty()) throw ValueError("batches: empty split");
    if (batch_size < 1) throw ValueError("batches: batch_size must be >= 1");
    std::vector<std::string> order = ids;
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(uint64_t(epoch))));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::string>> batches;
    for (size_t i = 0; i < order.size(); i += size_t(batch_size)) {
        const size_t end = std::min(order.size(), i + size_t(batch_size));
        batches.emplace_back(order.begin() + i, order.begin() + end);
    }
    return batches;
}

inline Tensor4<float> stack_images(const std::vector<SamplePair> &pairs) {
    if (pairs.empty()) throw ValueError("stack: no samples");
    const auto &first = pairs[0].image;
    Tensor4<float> out(int(pairs.size()), first.c, first.h, first.w);
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (!pairs[i].image.same_shape(first))
            throw ShapeError("stack: sample " + pairs[i].id + " has mismatched shape");
        std::copy(pairs[i].image.data.begin(), pairs[i].image.data.end(),
                  out.data.begin() + int64_t(i) * first.size());
    }
    return out;
}

inline Tensor4<float> stack_masks(const std::vector<SamplePair> &pairs) {
    if (pairs.empty()) throw ValueError("stack: no samples");
    const auto &first = pairs[0].mask;
    Tensor4<float> out(int(pairs.size()), first.c, first.h, first.w);
    for (size_t i = 0; i < pairs.size(); ++i) {
        std::copy(pairs[i].mask.data.begin(), pairs[i].mask.data.end(),
                  out.data.begin() + int64_t(i) * first.size());
    }
    return out;
}

struct SynthConfig {
    std::string out_dir;
    int count = 8;
    uint64_t seed = 0;
    int size = 224;
};

/// Bright filled disc on a dark noisy background, radius 20-60 px at 224^2
/// (scaled with size), plus the exact disc as ground truth. Returns the ids;
/// also writes <out_dir>/ids.txt.
inline std::vector<std::string> generate_synthetic_dataset(const SynthConfig &cfg) {
    namespace fs = std::filesystem;
    if (cfg.count < 1) throw ValueError("gen-synth: count must be >= 1");
    if (cfg.size < 16) throw ValueError("gen-synth: size too small");
    fs::create_directories(fs::path(cfg.out_dir) / "images");
    fs::create_directories(fs::path(cfg.out_dir) / "masks");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit{0.0, 1.0};
    const double scale = cfg.size / 224.0;
    std::vector<std::string> ids;

    for (int i = 0; i < cfg.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%03d", i);
        ids.emplace_back(name);

        const double radius = (20.0 + 40.0 * unit(rng)) * scale;
        const double cx = radius + unit(rng) * (cfg.size - 1 - 2 * radius);
        const double cy = radius + unit(rng) * (cfg.size - 1 - 2 * radius);
        float bg[3], fg[3];
        for (int ch = 0; ch < 3; ++ch) bg[ch] = float(0.08 + 0.17 * unit(rng));
        for (int ch = 0; ch < 3; ++ch) fg[ch] = float(0.60 + 0.30 * unit(rng));

        Tensor4<float> img(1, 3, cfg.size, cfg.size);
        Tensor4<float> mask(1, 1, cfg.size, cfg.size);
        std::uniform_real_distribution<double> noise{-0.03, 0.03};
        for (int y = 0; y < cfg.size; ++y)
            for (int x = 0; x < cfg.size; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const bool inside = d2 <= radius * radius;
                mask.at(0, 0, y, x) = inside ? 1.f : 0.f;
                for (int ch = 0; ch < 3; ++ch)
                    img.at(0, ch, y, x) = std::clamp(
                        (inside ? fg[ch] : bg[ch]) + float(noise(rng)), 0.f, 1.f);
            }
        save_image_rgb((fs::path(cfg.out_dir) / "images" / (ids.back() + ".png")).string(),
                       img);
        save_mask((fs::path(cfg.out_dir) / "masks" /
                   (ids.back() + "_segmentation.png")).string(),
                  mask);
    }

    std::ofstream list(fs::path(cfg.out_dir) / "ids.txt");
    for (const auto &id : ids) list << id << "\n";
    return ids;
}

} // namespace slpnet
