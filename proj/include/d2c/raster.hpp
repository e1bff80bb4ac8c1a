#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2c {

// Config / precondition violations; the CLI maps these to exit code 2.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss during optimization; carries the offending component.
struct TrainingDivergence : std::runtime_error {
    std::string component;
    explicit TrainingDivergence(const std::string& comp, const std::string& msg)
        : std::runtime_error(msg), component(comp) {}
};

// Single-channel 2-D intensity raster, row-major float storage.
// Slide-domain rasters hold integer values in [0, 65535]; binary masks hold
// {0, 1}; model-domain rasters hold normalized values.
struct Raster {
    int width = 0;
    int height = 0;
    double resolution_um = 0.5;  // micrometers per pixel
    int bit_depth = 16;
    std::vector<float> data;

    Raster() = default;
    Raster(int w, int h, float fill = 0.f, double res = 0.5)
        : width(w), height(h), resolution_um(res),
          data(static_cast<size_t>(w) * h, fill) {}

    float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return data.size(); }
    bool same_shape(const Raster& o) const {
        return width == o.width && height == o.height;
    }
};

// Named channel stack with shared geometry.
struct SlideRaster {
    std::vector<std::pair<std::string, Raster>> channels;

    const Raster* find(const std::string& name) const {
        for (auto& [n, r] : channels)
            if (n == name) return &r;
        return nullptr;
    }
    void add(std::string name, Raster r) {
        channels.emplace_back(std::move(name), std::move(r));
    }
};

// All writers are atomic (temp file in the same directory, then rename).
void save_png16(const Raster& r, const std::string& path);
Raster load_png16(const std::string& path);

// {0,1} mask persisted as 8-bit {0,255}.
void save_mask8(const Raster& m, const std::string& path);
Raster load_mask8(const std::string& path);

// Values expected in [0,255] (probability maps persisted as round(255*p)).
void save_png8(const Raster& r, const std::string& path);
Raster load_png8(const std::string& path);

// 8-bit RGB overlay image, channels interleaved BGR per OpenCV convention.
void save_rgb8(const std::vector<uint8_t>& bgr, int width, int height,
               const std::string& path);

}  // namespace d2c
