#pragma once

#include "d2c/raster.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace d2c {

enum class Blend { uniform_average, cosine_ramp };

// Sliding-window tile layout for a raster. Edge tiles are clamped inward so
// every tile lies fully inside the raster and every pixel is covered.
struct TilePlan {
    int width = 0;
    int height = 0;
    int tile_size = 256;
    int stride = 256;
    Blend blend = Blend::uniform_average;
    std::vector<std::pair<int, int>> tiles;  // (x, y), row-major
};

TilePlan plan_tiles(int width, int height, int tile_size = 256,
                    int stride = 256, Blend blend = Blend::uniform_average);

// Weight-blended average of per-tile outputs back into slide geometry.
// Accumulation in double; result is independent of deposition order.
Raster stitch(const std::vector<std::pair<std::pair<int, int>, Raster>>& tile_outputs,
              const TilePlan& plan);

Raster crop(const Raster& r, int x, int y, int w, int h);
void paste(Raster& dst, const Raster& src, int x, int y);

enum class SamplePolicy { uniform, mask_balanced };

struct PatchSampleResult {
    std::vector<std::pair<int, int>> coords;
    bool balance_fallback = false;  // mask had no positives; fell back to uniform
};

PatchSampleResult sample_patches(int width, int height, const Raster* mask,
                                 int n, SamplePolicy policy, int patch_size,
                                 uint64_t seed);

// Percentile psi in [0,100] of raster values; index convention
// round(p/100*(n-1)) on the sorted sequence.
float percentile(const Raster& r, double p);

// Affine map so [low_pct, high_pct] percentiles hit [lo, hi], then clip.
// Constant rasters map to the midpoint.
Raster normalize_intensity(const Raster& r, double low_pct = 1.0,
                           double high_pct = 99.0, float lo = -1.f,
                           float hi = 1.f);

// Reflect-pad right/bottom so both dims reach at least min_side.
Raster reflect_pad_to(const Raster& r, int min_side);

}  // namespace d2c
