#include "d2c/raster.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace d2c {

namespace fs = std::filesystem;

namespace {

void write_atomic(const cv::Mat& img, const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp.png";
    if (!cv::imwrite(tmp.string(), img))
        throw std::runtime_error("failed to write image: " + path);
    fs::rename(tmp, p);
}

cv::Mat read_or_throw(const std::string& path, int flags) {
    cv::Mat m = cv::imread(path, flags);
    if (m.empty()) throw std::runtime_error("failed to read image: " + path);
    return m;
}

}  // namespace

void save_png16(const Raster& r, const std::string& path) {
    cv::Mat img(r.height, r.width, CV_16UC1);
    for (int y = 0; y < r.height; ++y) {
        auto* row = img.ptr<uint16_t>(y);
        for (int x = 0; x < r.width; ++x) {
            float v = std::clamp(r.at(x, y), 0.f, 65535.f);
            row[x] = static_cast<uint16_t>(std::lround(v));
        }
    }
    write_atomic(img, path);
}

Raster load_png16(const std::string& path) {
    cv::Mat img = read_or_throw(path, cv::IMREAD_UNCHANGED);
    if (img.type() != CV_16UC1)
        throw std::runtime_error("expected 16-bit single-channel PNG: " + path);
    Raster r(img.cols, img.rows);
    for (int y = 0; y < r.height; ++y) {
        const auto* row = img.ptr<uint16_t>(y);
        for (int x = 0; x < r.width; ++x) r.at(x, y) = row[x];
    }
    return r;
}

void save_mask8(const Raster& m, const std::string& path) {
    cv::Mat img(m.height, m.width, CV_8UC1);
    for (int y = 0; y < m.height; ++y) {
        auto* row = img.ptr<uint8_t>(y);
        for (int x = 0; x < m.width; ++x) row[x] = m.at(x, y) > 0.5f ? 255 : 0;
    }
    write_atomic(img, path);
}

Raster load_mask8(const std::string& path) {
    cv::Mat img = read_or_throw(path, cv::IMREAD_GRAYSCALE);
    Raster r(img.cols, img.rows);
    r.bit_depth = 8;
    for (int y = 0; y < r.height; ++y) {
        const auto* row = img.ptr<uint8_t>(y);
        for (int x = 0; x < r.width; ++x) r.at(x, y) = row[x] >= 128 ? 1.f : 0.f;
    }
    return r;
}

void save_png8(const Raster& r, const std::string& path) {
    cv::Mat img(r.height, r.width, CV_8UC1);
    for (int y = 0; y < r.height; ++y) {
        auto* row = img.ptr<uint8_t>(y);
        for (int x = 0; x < r.width; ++x) {
            float v = std::clamp(r.at(x, y), 0.f, 255.f);
            row[x] = static_cast<uint8_t>(std::lround(v));
        }
    }
    write_atomic(img, path);
}

Raster load_png8(const std::string& path) {
    cv::Mat img = read_or_throw(path, cv::IMREAD_GRAYSCALE);
    Raster r(img.cols, img.rows);
    r.bit_depth = 8;
    for (int y = 0; y < r.height; ++y) {
        const auto* row = img.ptr<uint8_t>(y);
        for (int x = 0; x < r.width; ++x) r.at(x, y) = row[x];
    }
    return r;
}

void save_rgb8(const std::vector<uint8_t>& bgr, int width, int height,
               const std::string& path) {
    if (bgr.size() != static_cast<size_t>(width) * height * 3)
        throw ValidationError("overlay buffer size does not match dimensions");
    cv::Mat img(height, width, CV_8UC3, const_cast<uint8_t*>(bgr.data()));
    write_atomic(img, path);
}

}  // namespace d2c
