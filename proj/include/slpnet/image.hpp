#pragma once

#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "slpnet/tensor.hpp"

namespace slpnet {

/// Decode an 8-bit raster file as RGB, scaled to [0,1], shape (1,3,H,W).
inline Tensor4<float> load_image_rgb(const std::string &path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("image: cannot decode " + path);
    Tensor4<float> t(1, 3, bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b *row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            t.at(0, 0, y, x) = row[x][2] / 255.f; // R
            t.at(0, 1, y, x) = row[x][1] / 255.f; // G
            t.at(0, 2, y, x) = row[x][0] / 255.f; // B
        }
    }
    return t;
}

/// Decode an 8-bit grayscale mask, binarized at the strict >127 threshold,
/// shape (1,1,H,W) with values in {0,1}.
inline Tensor4<float> load_mask(const std::string &path) {
    cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw IoError("image: cannot decode mask " + path);
    Tensor4<float> t(1, 1, gray.rows, gray.cols);
    for (int y = 0; y < gray.rows; ++y) {
        const uint8_t *row = gray.ptr<uint8_t>(y);
        for (int x = 0; x < gray.cols; ++x) t.at(0, 0, y, x) = row[x] > 127 ? 1.f : 0.f;
    }
    return t;
}

/// Write a binary mask as an 8-bit grayscale file with values {0,255}.
inline void save_mask(const std::string &path, const Tensor4<float> &mask) {
    if (mask.n != 1 || mask.c != 1) throw ShapeError("save_mask: expected (1,1,H,W)");
    cv::Mat gray(mask.h, mask.w, CV_8UC1);
    for (int y = 0; y < mask.h; ++y) {
        uint8_t *row = gray.ptr<uint8_t>(y);
        for (int x = 0; x < mask.w; ++x) row[x] = mask.at(0, 0, y, x) > 0.5f ? 255 : 0;
    }
    if (!cv::imwrite(path, gray)) throw IoError("image: cannot write " + path);
}

/// Write a (1,3,H,W) tensor in [0,1] as an 8-bit RGB file.
inline void save_image_rgb(const std::string &path, const Tensor4<float> &img) {
    if (img.n != 1 || img.c != 3) throw ShapeError("save_image_rgb: expected (1,3,H,W)");
    cv::Mat bgr(img.h, img.w, CV_8UC3);
    auto to8 = [](float v) {
        return static_cast<uint8_t>(std::clamp(v, 0.f, 1.f) * 255.f + 0.5f);
    };
    for (int y = 0; y < img.h; ++y) {
        cv::Vec3b *row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.w; ++x) {
            row[x][2] = to8(img.at(0, 0, y, x));
            row[x][1] = to8(img.at(0, 1, y, x));
            row[x][0] = to8(img.at(0, 2, y, x));
        }
    }
    if (!cv::imwrite(path, bgr)) throw IoError("image: cannot write " + path);
}

} // namespace slpnet
