#include "d2c/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace d2c {

TilePlan plan_tiles(int width, int height, int tile_size, int stride,
                    Blend blend) {
    if (width < tile_size || height < tile_size)
        throw ValidationError("raster smaller than tile_size: " +
                              std::to_string(width) + "x" + std::to_string(height) +
                              " < " + std::to_string(tile_size));
    if (stride < 1 || stride > tile_size)
        throw ValidationError("stride must satisfy 1 <= stride <= tile_size");

    auto positions = [&](int extent) {
        std::vector<int> pos;
        int n = static_cast<int>(
                    std::ceil(double(extent - tile_size) / stride)) + 1;
        for (int i = 0; i < n; ++i)
            pos.push_back(std::min(i * stride, extent - tile_size));
        pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
        return pos;
    };

    TilePlan plan;
    plan.width = width;
    plan.height = height;
    plan.tile_size = tile_size;
    plan.stride = stride;
    plan.blend = blend;
    for (int y : positions(height))
        for (int x : positions(width))
            plan.tiles.emplace_back(x, y);
    return plan;
}

namespace {

// Tile weight profile along one axis. Cosine ramp keeps a small floor so
// weight_sum stays strictly positive at slide borders.
std::vector<double> weight_profile(int tile_size, Blend blend) {
    std::vector<double> w(tile_size, 1.0);
    if (blend == Blend::cosine_ramp) {
        for (int i = 0; i < tile_size; ++i) {
            double hann = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi *
                                                (i + 0.5) / tile_size));
            w[i] = 0.05 + 0.95 * hann;
        }
    }
    return w;
}

}  // namespace

Raster stitch(const std::vector<std::pair<std::pair<int, int>, Raster>>& tile_outputs,
              const TilePlan& plan) {
    if (tile_outputs.size() != plan.tiles.size())
        throw ValidationError("tile outputs (" + std::to_string(tile_outputs.size()) +
                              ") do not match plan (" +
                              std::to_string(plan.tiles.size()) + " tiles)");
    std::vector<std::pair<int, int>> seen;
    for (auto& [c, r] : tile_outputs) {
        if (r.width != plan.tile_size || r.height != plan.tile_size)
            throw ValidationError("tile output shape mismatch");
        seen.push_back(c);
    }
    auto expect = plan.tiles;
    std::sort(seen.begin(), seen.end());
    std::sort(expect.begin(), expect.end());
    if (seen != expect)
        throw ValidationError("tile coordinates do not match plan");

    const int T = plan.tile_size;
    std::vector<double> value_sum(static_cast<size_t>(plan.width) * plan.height, 0.0);
    std::vector<double> weight_sum(value_sum.size(), 0.0);
    auto prof = weight_profile(T, plan.blend);

    for (auto& [c, tile] : tile_outputs) {
        auto [tx, ty] = c;
        for (int y = 0; y < T; ++y) {
            size_t row = static_cast<size_t>(ty + y) * plan.width + tx;
            for (int x = 0; x < T; ++x) {
                double w = prof[x] * prof[y];
                value_sum[row + x] += w * tile.at(x, y);
                weight_sum[row + x] += w;
            }
        }
    }

    Raster out(plan.width, plan.height);
    for (size_t i = 0; i < out.size(); ++i)
        out.data[i] = static_cast<float>(value_sum[i] / weight_sum[i]);
    return out;
}

Raster crop(const Raster& r, int x, int y, int w, int h) {
    if (x < 0 || y < 0 || x + w > r.width || y + h > r.height)
        throw ValidationError("crop out of bounds");
    Raster out(w, h, 0.f, r.resolution_um);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            out.at(xx, yy) = r.at(x + xx, y + yy);
    return out;
}

void paste(Raster& dst, const Raster& src, int x, int y) {
    if (x < 0 || y < 0 || x + src.width > dst.width || y + src.height > dst.height)
        throw ValidationError("paste out of bounds");
    for (int yy = 0; yy < src.height; ++yy)
        for (int xx = 0; xx < src.width; ++xx)
            dst.at(x + xx, y + yy) = src.at(xx, yy);
}

PatchSampleResult sample_patches(int width, int height, const Raster* mask,
                                 int n, SamplePolicy policy, int patch_size,
                                 uint64_t seed) {
    if (width < patch_size || height < patch_size)
        throw ValidationError("raster smaller than patch_size");
    if (policy == SamplePolicy::mask_balanced && mask == nullptr)
        throw ValidationError("mask_balanced sampling requires a mask");
    if (mask && (mask->width != width || mask->height != height))
        throw ValidationError("mask dimensions do not match raster");

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dx(0, width - patch_size);
    std::uniform_int_distribution<int> dy(0, height - patch_size);

    PatchSampleResult res;

    // Summed-area table of mask positives for fast coverage queries.
    std::vector<int64_t> sat;
    bool any_positive = false;
    if (policy == SamplePolicy::mask_balanced) {
        sat.assign(static_cast<size_t>(width + 1) * (height + 1), 0);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                int64_t v = mask->at(x, y) > 0.5f ? 1 : 0;
                any_positive = any_positive || v;
                sat[(y + 1ull) * (width + 1) + (x + 1)] =
                    v + sat[(y + 1ull) * (width + 1) + x] +
                    sat[static_cast<size_t>(y) * (width + 1) + (x + 1)] -
                    sat[static_cast<size_t>(y) * (width + 1) + x];
            }
        if (!any_positive) res.balance_fallback = true;
    }

    auto coverage = [&](int x, int y) {
        int64_t c = sat[(y + size_t(patch_size)) * (width + 1) + x + patch_size] -
                    sat[(y + size_t(patch_size)) * (width + 1) + x] -
                    sat[static_cast<size_t>(y) * (width + 1) + x + patch_size] +
                    sat[static_cast<size_t>(y) * (width + 1) + x];
        return double(c) / (double(patch_size) * patch_size);
    };

    bool balanced = policy == SamplePolicy::mask_balanced && !res.balance_fallback;
    for (int i = 0; i < n; ++i) {
        int x = dx(rng), y = dy(rng);
        // Every other draw is steered toward >= 10% positive coverage so at
        // least ~50% of patches carry epithelium.
        if (balanced && i % 2 == 0) {
            for (int attempt = 0; attempt < 200 && coverage(x, y) < 0.10;
                 ++attempt) {
                x = dx(rng);
                y = dy(rng);
            }
        }
        res.coords.emplace_back(x, y);
    }
    return res;
}

float percentile(const Raster& r, double p) {
    if (r.data.empty()) throw ValidationError("percentile of empty raster");
    std::vector<float> v(r.data);
    size_t idx = static_cast<size_t>(
        std::lround(p / 100.0 * double(v.size() - 1)));
    idx = std::min(idx, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + idx, v.end());
    return v[idx];
}

Raster normalize_intensity(const Raster& r, double low_pct, double high_pct,
                           float lo, float hi) {
    float plo = percentile(r, low_pct);
    float phi = percentile(r, high_pct);
    Raster out(r.width, r.height, 0.f, r.resolution_um);
    float mid = 0.5f * (lo + hi);
    if (phi <= plo) {
        std::fill(out.data.begin(), out.data.end(), mid);
        return out;
    }
    float scale = (hi - lo) / (phi - plo);
    for (size_t i = 0; i < r.size(); ++i)
        out.data[i] = std::clamp(lo + (r.data[i] - plo) * scale, lo, hi);
    return out;
}

Raster reflect_pad_to(const Raster& r, int min_side) {
    int w = std::max(r.width, min_side);
    int h = std::max(r.height, min_side);
    if (w == r.width && h == r.height) return r;
    if (r.width < 2 || r.height < 2)
        throw ValidationError("raster too small for reflect padding");
    Raster out(w, h, 0.f, r.resolution_um);
    auto reflect = [](int i, int n) {
        int period = 2 * (n - 1);
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - i;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = r.at(reflect(x, r.width), reflect(y, r.height));
    return out;
}

}  // namespace d2c
