#pragma once

#include "d2c/checkpoint.hpp"
#include "d2c/phantom.hpp"
#include "d2c/tiling.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace d2c {

struct TwoStepOptions {
    int stride = 128;
    Blend blend = Blend::cosine_ramp;
    double threshold = -1.0;  // seg binarization cut; <0 = use SegConfig's
    // Optional artifact annotations; per-region synthetic-CK statistics are
    // reported in the sidecar so DAPI-artifact effects are observable.
    const std::vector<ArtifactAnnotation>* artifacts = nullptr;
};

struct TwoStepResult {
    Raster synthetic_ck;    // 16-bit intensity domain [0, 65535]
    Raster probability_map; // [0,1]
    Raster epithelium_mask; // {0,1}
    nlohmann::json sidecar;
};

// Fig-style two-pass pipeline: synthesize CK from DAPI tile-by-tile, stitch,
// then segment the stitched synthetic CK tile-by-tile and stitch again.
// Slides smaller than the patch size are reflect-padded and cropped back.
TwoStepResult run_two_step(const Raster& dapi_slide, Generator& gen,
                           const GeneratorConfig& gcfg, Segmenter& seg,
                           const SegConfig& scfg, const TwoStepOptions& opts = {});

// Checkpoint-loading convenience used by the CLI; validates patch geometry
// compatibility and records checkpoint identifiers in the sidecar.
TwoStepResult run_two_step_from_checkpoints(const Raster& dapi_slide,
                                            const std::string& gen_ckpt_path,
                                            const std::string& seg_ckpt_path,
                                            const TwoStepOptions& opts = {});

// Single tile pass over a slide-scale raster with a per-tile model function.
Raster tiled_apply(const Raster& normalized_slide, int tile_size, int stride,
                   Blend blend,
                   const std::function<torch::Tensor(const torch::Tensor&)>& fn);

}  // namespace d2c
