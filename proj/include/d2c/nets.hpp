#pragma once

#include "d2c/raster.hpp"

#include <torch/torch.h>

#include <json.hpp>

namespace d2c {

struct GeneratorConfig {
    int input_channels = 1;
    int output_channels = 1;
    int base_width = 16;
    int depth = 7;
    double output_lo = -1.0;
    double output_hi = 1.0;

    void validate() const;
    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

struct DiscriminatorConfig {
    int input_channels = 2;  // DAPI conditioned with real-or-synthetic CK
    int n_layers = 3;
    int base_width = 16;

    void validate() const;
    nlohmann::json to_json() const;
    static DiscriminatorConfig from_json(const nlohmann::json& j);
};

enum class SegLoss { cross_entropy, dice, combined };

std::string to_string(SegLoss k);
SegLoss seg_loss_from_string(const std::string& s);

struct SegConfig {
    int input_channels = 1;
    int base_width = 32;
    int depth = 5;
    SegLoss loss_kind = SegLoss::combined;
    double threshold = 0.5;
    double learning_rate = 1e-3;
    int batch_size = 4;
    int epochs = 8;
    uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SegConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
    double lambda_l1 = 100.0;
    double learning_rate = 2e-4;
    double adam_beta1 = 0.5;
    int batch_size = 4;
    int epochs = 12;
    uint64_t seed = 0;
    int patch_size = 256;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Strided-conv U-Net trunk with skip connections; raw (pre-activation) output.
struct UnetCoreImpl : torch::nn::Module {
    UnetCoreImpl(int in_ch, int out_ch, int base_width, int depth);
    torch::Tensor forward(torch::Tensor x);

    int depth;
    std::vector<torch::nn::Sequential> downs, ups;
};
TORCH_MODULE(UnetCore);

struct GeneratorImpl : torch::nn::Module {
    explicit GeneratorImpl(const GeneratorConfig& cfg);
    // Output squashed into [output_lo, output_hi]; spatial dims preserved.
    torch::Tensor forward(torch::Tensor dapi);

    GeneratorConfig cfg;
    UnetCore core = nullptr;
};
TORCH_MODULE(Generator);

struct DiscriminatorImpl : torch::nn::Module {
    explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);
    // Grid of patch logits for the conditioned (DAPI, CK) pair.
    torch::Tensor forward(torch::Tensor dapi, torch::Tensor ck);

    DiscriminatorConfig cfg;
    torch::nn::Sequential model;
};
TORCH_MODULE(Discriminator);

// Logit-grid side length from convolution output-size arithmetic.
int discriminator_grid_size(const DiscriminatorConfig& cfg, int input_size);

struct SegmenterImpl : torch::nn::Module {
    explicit SegmenterImpl(const SegConfig& cfg);
    torch::Tensor forward_logits(torch::Tensor ck);
    torch::Tensor forward_prob(torch::Tensor ck);  // sigmoid, values in [0,1]

    SegConfig cfg;
    UnetCore core = nullptr;
};
TORCH_MODULE(Segmenter);

// pix2pix-style init: conv weights ~ N(0, 0.02), norm gains ~ N(1, 0.02).
void init_weights(torch::nn::Module& m);

struct GanLosses {
    torch::Tensor g_loss, d_loss, adv, l1;
};

// Least-squares adversarial objective with an L1 reconstruction term:
// g_loss = adv + lambda_l1 * l1, d_loss = (mse(real,1) + mse(fake,0)) / 2.
GanLosses gan_losses_from_fake(Discriminator& disc, const torch::Tensor& dapi,
                               const torch::Tensor& ck_target,
                               const torch::Tensor& fake, double lambda_l1);

GanLosses gan_step_losses(Generator& gen, Discriminator& disc,
                          const torch::Tensor& dapi,
                          const torch::Tensor& ck_target, double lambda_l1);

// Soft dice loss at probability level; 0 for an exact {0,1} match.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target);

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& target,
                       SegLoss kind);

// Applies binarize's >= threshold convention.
Raster binarize(const Raster& probability_map, double threshold);

// Raster <-> tensor bridges (1xHxW / HxW float).
torch::Tensor raster_to_tensor(const Raster& r);
Raster tensor_to_raster(const torch::Tensor& t, double resolution_um = 0.5);

}  // namespace d2c
