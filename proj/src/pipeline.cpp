#include "d2c/pipeline.hpp"

#include "d2c/metrics.hpp"

#include <cmath>

namespace d2c {

using nlohmann::json;

Raster tiled_apply(const Raster& slide, int tile_size, int stride, Blend blend,
                   const std::function<torch::Tensor(const torch::Tensor&)>& fn) {
    torch::NoGradGuard ng;
    TilePlan plan = plan_tiles(slide.width, slide.height, tile_size, stride, blend);
    std::vector<std::pair<std::pair<int, int>, Raster>> outputs;
    outputs.reserve(plan.tiles.size());
    const int batch = 4;
    for (size_t i = 0; i < plan.tiles.size(); i += batch) {
        std::vector<torch::Tensor> xs;
        size_t end = std::min(plan.tiles.size(), i + batch);
        for (size_t k = i; k < end; ++k) {
            auto [x, y] = plan.tiles[k];
            xs.push_back(raster_to_tensor(crop(slide, x, y, tile_size, tile_size)));
        }
        auto out = fn(torch::stack(xs));
        for (size_t k = i; k < end; ++k)
            outputs.emplace_back(plan.tiles[k],
                                 tensor_to_raster(out[int64_t(k - i)],
                                                  slide.resolution_um));
    }
    return stitch(outputs, plan);
}

TwoStepResult run_two_step(const Raster& dapi_slide, Generator& gen,
                           const GeneratorConfig& gcfg, Segmenter& seg,
                           const SegConfig& scfg, const TwoStepOptions& opts) {
    const int patch = 256;
    if (gcfg.input_channels != 1 || gcfg.output_channels != 1)
        throw ValidationError(
            "checkpoint/geometry mismatch: generator must be 1-channel in/out");
    if (scfg.input_channels != 1)
        throw ValidationError(
            "checkpoint/geometry mismatch: segmenter must take 1 channel");
    double threshold = opts.threshold < 0 ? scfg.threshold : opts.threshold;
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ValidationError("threshold must be in (0,1)");
    if (dapi_slide.width < 2 || dapi_slide.height < 2)
        throw ValidationError("slide too small");

    gen->eval();
    seg->eval();

    const int orig_w = dapi_slide.width, orig_h = dapi_slide.height;
    Raster slide = reflect_pad_to(dapi_slide, patch);

    // Step 1: DAPI -> synthetic CK. Whole-slide percentile normalization,
    // matching the per-source normalization used in training.
    Raster dapi_norm = normalize_intensity(slide);
    Raster syn_norm = tiled_apply(
        dapi_norm, patch, opts.stride, opts.blend,
        [&](const torch::Tensor& x) { return gen->forward(x); });

    // Map generator output range to the 16-bit intensity domain.
    Raster syn16(syn_norm.width, syn_norm.height, 0.f, dapi_slide.resolution_um);
    double lo = gcfg.output_lo, hi = gcfg.output_hi;
    for (size_t i = 0; i < syn_norm.size(); ++i) {
        double v = (syn_norm.data[i] - lo) / (hi - lo);
        syn16.data[i] = float(std::round(std::clamp(v, 0.0, 1.0) * 65535.0));
    }

    // Step 2: segment the synthetic CK.
    Raster ck_norm = normalize_intensity(syn16);
    Raster prob = tiled_apply(
        ck_norm, patch, opts.stride, opts.blend,
        [&](const torch::Tensor& x) { return seg->forward_prob(x); });

    TwoStepResult res;
    res.synthetic_ck = crop(syn16, 0, 0, orig_w, orig_h);
    res.probability_map = crop(prob, 0, 0, orig_w, orig_h);
    res.epithelium_mask = binarize(res.probability_map, threshold);

    res.sidecar = {{"width", orig_w},
                   {"height", orig_h},
                   {"patch_size", patch},
                   {"stride", opts.stride},
                   {"blend", opts.blend == Blend::cosine_ramp ? "cosine_ramp"
                                                              : "uniform_average"},
                   {"threshold", threshold},
                   {"resolution_um", dapi_slide.resolution_um}};

    if (opts.artifacts) {
        json regions = json::array();
        for (auto& a : *opts.artifacts) {
            double sum_ck = 0, sum_p = 0;
            int64_t count = 0, positive = 0;
            for (int y = 0; y < orig_h; ++y)
                for (int x = 0; x < orig_w; ++x) {
                    if (x >= a.region_mask.width || y >= a.region_mask.height ||
                        a.region_mask.at(x, y) <= 0.5f)
                        continue;
                    sum_ck += res.synthetic_ck.at(x, y);
                    sum_p += res.probability_map.at(x, y);
                    positive += res.epithelium_mask.at(x, y) > 0.5f;
                    ++count;
                }
            if (count == 0) continue;
            regions.push_back({{"kind", to_string(a.kind)},
                               {"pixels", count},
                               {"mean_synthetic_ck", sum_ck / double(count)},
                               {"mean_probability", sum_p / double(count)},
                               {"positive_fraction", double(positive) / double(count)}});
        }
        res.sidecar["artifact_regions"] = regions;
    }
    return res;
}

TwoStepResult run_two_step_from_checkpoints(const Raster& dapi_slide,
                                            const std::string& gen_ckpt_path,
                                            const std::string& seg_ckpt_path,
                                            const TwoStepOptions& opts) {
    auto gckpt = load_translation_checkpoint(gen_ckpt_path);
    auto sckpt = load_seg_checkpoint(seg_ckpt_path);
    if (gckpt.train_config.patch_size != 256)
        throw ValidationError("checkpoint/geometry mismatch: patch_size != 256");
    auto res = run_two_step(dapi_slide, gckpt.generator, gckpt.generator_config,
                            sckpt.segmenter, sckpt.seg_config, opts);
    res.sidecar["checkpoints"] = {
        {"dapi2ck", {{"path", gen_ckpt_path},
                     {"format_version", gckpt.format_version}}},
        {"segmentation", {{"path", seg_ckpt_path},
                          {"format_version", sckpt.format_version}}}};
    return res;
}

}  // namespace d2c
