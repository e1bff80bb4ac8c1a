#include "d2c/nets.hpp"

#include <algorithm>
#include <cmath>

namespace d2c {

using nlohmann::json;

void GeneratorConfig::validate() const {
    if (input_channels < 1 || output_channels < 1)
        throw ValidationError("generator channel counts must be >= 1");
    if (depth < 1 || depth > 8)
        throw ValidationError("generator depth must be in [1,8]");
    if (256 % (1 << depth) != 0)
        throw ValidationError("256 must be divisible by 2^depth");
    if (base_width < 1) throw ValidationError("base_width must be >= 1");
    if (!(output_lo < output_hi))
        throw ValidationError("output_range must be a nonempty interval");
}

json GeneratorConfig::to_json() const {
    return {{"input_channels", input_channels},
            {"output_channels", output_channels},
            {"base_width", base_width},
            {"depth", depth},
            {"output_range", {output_lo, output_hi}}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
    GeneratorConfig c;
    c.input_channels = j.value("input_channels", 1);
    c.output_channels = j.value("output_channels", 1);
    c.base_width = j.value("base_width", 16);
    c.depth = j.value("depth", 7);
    if (j.contains("output_range")) {
        c.output_lo = j["output_range"][0];
        c.output_hi = j["output_range"][1];
    }
    return c;
}

void DiscriminatorConfig::validate() const {
    if (input_channels < 1) throw ValidationError("discriminator input_channels >= 1");
    if (n_layers < 1 || n_layers > 6)
        throw ValidationError("discriminator n_layers must be in [1,6]");
    if (base_width < 1) throw ValidationError("base_width must be >= 1");
}

json DiscriminatorConfig::to_json() const {
    return {{"input_channels", input_channels},
            {"n_layers", n_layers},
            {"base_width", base_width}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
    DiscriminatorConfig c;
    c.input_channels = j.value("input_channels", 2);
    c.n_layers = j.value("n_layers", 3);
    c.base_width = j.value("base_width", 16);
    return c;
}

std::string to_string(SegLoss k) {
    switch (k) {
        case SegLoss::cross_entropy: return "cross_entropy";
        case SegLoss::dice: return "dice";
        case SegLoss::combined: return "combined";
    }
    throw std::logic_error("unknown loss kind");
}

SegLoss seg_loss_from_string(const std::string& s) {
    if (s == "cross_entropy") return SegLoss::cross_entropy;
    if (s == "dice") return SegLoss::dice;
    if (s == "combined") return SegLoss::combined;
    throw ValidationError("unknown segmentation loss kind: " + s);
}

void SegConfig::validate() const {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ValidationError("threshold must be in (0,1)");
    if (depth < 1 || depth > 8 || 256 % (1 << depth) != 0)
        throw ValidationError("256 must be divisible by 2^depth");
    if (base_width < 1) throw ValidationError("base_width must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
}

json SegConfig::to_json() const {
    return {{"input_channels", input_channels},
            {"base_width", base_width},
            {"depth", depth},
            {"loss_kind", to_string(loss_kind)},
            {"threshold", threshold},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed}};
}

SegConfig SegConfig::from_json(const json& j) {
    SegConfig c;
    c.input_channels = j.value("input_channels", 1);
    c.base_width = j.value("base_width", 32);
    c.depth = j.value("depth", 5);
    if (j.contains("loss_kind")) c.loss_kind = seg_loss_from_string(j["loss_kind"]);
    c.threshold = j.value("threshold", 0.5);
    c.learning_rate = j.value("learning_rate", 1e-3);
    c.batch_size = j.value("batch_size", 4);
    c.epochs = j.value("epochs", 8);
    c.seed = j.value("seed", uint64_t(0));
    return c;
}

void TrainConfig::validate() const {
    if (lambda_l1 < 0) throw ValidationError("lambda_l1 must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (patch_size != 256) throw ValidationError("patch_size is fixed at 256");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
}

json TrainConfig::to_json() const {
    return {{"lambda_l1", lambda_l1},
            {"learning_rate", learning_rate},
            {"adam_beta1", adam_beta1},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed},
            {"patch_size", patch_size}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.lambda_l1 = j.value("lambda_l1", 100.0);
    c.learning_rate = j.value("learning_rate", 2e-4);
    c.adam_beta1 = j.value("adam_beta1", 0.5);
    c.batch_size = j.value("batch_size", 4);
    c.epochs = j.value("epochs", 12);
    c.seed = j.value("seed", uint64_t(0));
    c.patch_size = j.value("patch_size", 256);
    return c;
}

namespace {

int level_width(int base, int level) { return std::min(base << level, base * 8); }

torch::nn::Conv2d conv4x4(int in, int out, int stride) {
    return torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, 4).stride(stride).padding(1));
}

}  // namespace

UnetCoreImpl::UnetCoreImpl(int in_ch, int out_ch, int base_width, int d)
    : depth(d) {
    for (int i = 0; i < depth; ++i) {
        int cin = i == 0 ? in_ch : level_width(base_width, i - 1);
        int cout = level_width(base_width, i);
        torch::nn::Sequential block;
        block->push_back(conv4x4(cin, cout, 2));
        if (i > 0 && i < depth - 1)
            block->push_back(torch::nn::InstanceNorm2d(
                torch::nn::InstanceNorm2dOptions(cout).affine(true)));
        block->push_back(torch::nn::LeakyReLU(
            torch::nn::LeakyReLUOptions().negative_slope(0.2)));
        downs.push_back(register_module("down" + std::to_string(i), block));
    }
    for (int i = depth - 1; i >= 0; --i) {
        // Input: bottleneck at the innermost, otherwise up-path concat skip.
        int cin = i == depth - 1 ? level_width(base_width, i)
                                 : 2 * level_width(base_width, i);
        int cout = i == 0 ? out_ch : level_width(base_width, i - 1);
        torch::nn::Sequential block;
        block->push_back(torch::nn::ConvTranspose2d(
            torch::nn::ConvTranspose2dOptions(cin, cout, 4).stride(2).padding(1)));
        if (i > 0) {
            block->push_back(torch::nn::InstanceNorm2d(
                torch::nn::InstanceNorm2dOptions(cout).affine(true)));
            block->push_back(torch::nn::ReLU());
        }
        ups.push_back(register_module("up" + std::to_string(i), block));
    }
}

torch::Tensor UnetCoreImpl::forward(torch::Tensor x) {
    std::vector<torch::Tensor> skips;
    for (int i = 0; i < depth; ++i) {
        x = downs[i]->forward(x);
        if (i < depth - 1) skips.push_back(x);
    }
    for (int u = 0; u < depth; ++u) {
        x = ups[u]->forward(x);
        int level = depth - 2 - u;  // skip feeding the next up block
        if (level >= 0) x = torch::cat({x, skips[level]}, 1);
    }
    return x;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& c) : cfg(c) {
    cfg.validate();
    core = register_module(
        "core", UnetCore(cfg.input_channels, cfg.output_channels, cfg.base_width,
                         cfg.depth));
    init_weights(*this);
}

torch::Tensor GeneratorImpl::forward(torch::Tensor dapi) {
    if (dapi.dim() == 3) dapi = dapi.unsqueeze(0);
    if (dapi.dim() != 4 || dapi.size(1) != cfg.input_channels)
        throw ValidationError(
            "generator input: expected (N," + std::to_string(cfg.input_channels) +
            ",H,W), got shape with " + std::to_string(dapi.dim()) + " dims");
    int64_t h = dapi.size(2), w = dapi.size(3);
    int64_t div = 1 << cfg.depth;
    if (h % div != 0 || w % div != 0 || h < div || w < div)
        throw ValidationError("generator input: spatial dims " + std::to_string(h) +
                              "x" + std::to_string(w) +
                              " not divisible by 2^depth=" + std::to_string(div));
    auto y = torch::tanh(core->forward(dapi));
    if (cfg.output_lo != -1.0 || cfg.output_hi != 1.0)
        y = cfg.output_lo + (y + 1.0) * 0.5 * (cfg.output_hi - cfg.output_lo);
    return y;
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& c) : cfg(c) {
    cfg.validate();
    int prev = cfg.input_channels;
    for (int i = 0; i < cfg.n_layers; ++i) {
        int cout = level_width(cfg.base_width, i);
        model->push_back(conv4x4(prev, cout, 2));
        if (i > 0)
            model->push_back(torch::nn::InstanceNorm2d(
                torch::nn::InstanceNorm2dOptions(cout).affine(true)));
        model->push_back(torch::nn::LeakyReLU(
            torch::nn::LeakyReLUOptions().negative_slope(0.2)));
        prev = cout;
    }
    int cout = level_width(cfg.base_width, cfg.n_layers);
    model->push_back(conv4x4(prev, cout, 1));
    model->push_back(torch::nn::InstanceNorm2d(
        torch::nn::InstanceNorm2dOptions(cout).affine(true)));
    model->push_back(torch::nn::LeakyReLU(
        torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    model->push_back(conv4x4(cout, 1, 1));
    register_module("model", model);
    init_weights(*this);
}

torch::Tensor DiscriminatorImpl::forward(torch::Tensor dapi, torch::Tensor ck) {
    if (dapi.dim() == 3) dapi = dapi.unsqueeze(0);
    if (ck.dim() == 3) ck = ck.unsqueeze(0);
    if (dapi.sizes() != ck.sizes())
        throw ValidationError("discriminator: DAPI and CK patch shapes differ");
    return model->forward(torch::cat({dapi, ck}, 1));
}

int discriminator_grid_size(const DiscriminatorConfig& cfg, int input_size) {
    int s = input_size;
    auto conv_out = [](int n, int k, int stride, int pad) {
        return (n + 2 * pad - k) / stride + 1;
    };
    for (int i = 0; i < cfg.n_layers; ++i) s = conv_out(s, 4, 2, 1);
    s = conv_out(s, 4, 1, 1);  // stride-1 block
    s = conv_out(s, 4, 1, 1);  // output head
    if (s < 1)
        throw ValidationError("discriminator collapses input of size " +
                              std::to_string(input_size));
    return s;
}

SegmenterImpl::SegmenterImpl(const SegConfig& c) : cfg(c) {
    cfg.validate();
    core = register_module(
        "core", UnetCore(cfg.input_channels, 1, cfg.base_width, cfg.depth));
    init_weights(*this);
}

torch::Tensor SegmenterImpl::forward_logits(torch::Tensor ck) {
    if (ck.dim() == 3) ck = ck.unsqueeze(0);
    if (ck.dim() != 4 || ck.size(1) != cfg.input_channels)
        throw ValidationError("segmenter input: expected (N," +
                              std::to_string(cfg.input_channels) + ",H,W)");
    int64_t div = 1 << cfg.depth;
    if (ck.size(2) % div != 0 || ck.size(3) % div != 0)
        throw ValidationError("segmenter input: spatial dims not divisible by 2^depth");
    return core->forward(ck);
}

torch::Tensor SegmenterImpl::forward_prob(torch::Tensor ck) {
    return torch::sigmoid(forward_logits(std::move(ck)));
}

void init_weights(torch::nn::Module& root) {
    for (auto& m : root.modules(/*include_self=*/false)) {
        if (auto* conv = m->as<torch::nn::Conv2d>()) {
            torch::nn::init::normal_(conv->weight, 0.0, 0.02);
            if (conv->bias.defined()) torch::nn::init::zeros_(conv->bias);
        } else if (auto* tconv = m->as<torch::nn::ConvTranspose2d>()) {
            torch::nn::init::normal_(tconv->weight, 0.0, 0.02);
            if (tconv->bias.defined()) torch::nn::init::zeros_(tconv->bias);
        } else if (auto* in = m->as<torch::nn::InstanceNorm2d>()) {
            if (in->weight.defined()) torch::nn::init::normal_(in->weight, 1.0, 0.02);
            if (in->bias.defined()) torch::nn::init::zeros_(in->bias);
        }
    }
}

namespace {

void check_finite(const torch::Tensor& t, const char* component) {
    if (!torch::isfinite(t).all().item<bool>())
        throw TrainingDivergence(component,
                                 std::string("non-finite value in loss component: ") +
                                     component);
}

}  // namespace

GanLosses gan_losses_from_fake(Discriminator& disc, const torch::Tensor& dapi,
                               const torch::Tensor& ck_target,
                               const torch::Tensor& fake, double lambda_l1) {
    if (lambda_l1 < 0) throw ValidationError("lambda_l1 must be >= 0");
    auto logits_real = disc->forward(dapi, ck_target);
    auto logits_fake_d = disc->forward(dapi, fake.detach());
    auto d_loss = 0.5 * (torch::mse_loss(logits_real, torch::ones_like(logits_real)) +
                         torch::mse_loss(logits_fake_d, torch::zeros_like(logits_fake_d)));

    auto logits_fake_g = disc->forward(dapi, fake);
    auto adv = torch::mse_loss(logits_fake_g, torch::ones_like(logits_fake_g));
    auto l1 = torch::l1_loss(fake, ck_target);
    auto g_loss = adv + lambda_l1 * l1;

    check_finite(adv, "adv");
    check_finite(l1, "l1");
    check_finite(g_loss, "g_loss");
    check_finite(d_loss, "d_loss");
    return {g_loss, d_loss, adv, l1};
}

GanLosses gan_step_losses(Generator& gen, Discriminator& disc,
                          const torch::Tensor& dapi,
                          const torch::Tensor& ck_target, double lambda_l1) {
    if (dapi.size(-1) != ck_target.size(-1) || dapi.size(-2) != ck_target.size(-2))
        throw ValidationError("gan_step_losses: pair spatial shapes differ");
    auto fake = gen->forward(dapi);
    return gan_losses_from_fake(disc, dapi, ck_target, fake, lambda_l1);
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target) {
    const double eps = 1.0;
    return 1.0 -
           (2.0 * (probs * target).sum() + eps) / (probs.sum() + target.sum() + eps);
}

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& target,
                       SegLoss kind) {
    auto bce = torch::binary_cross_entropy_with_logits(logits, target);
    if (kind == SegLoss::cross_entropy) return bce;
    auto dice = dice_loss(torch::sigmoid(logits), target);
    if (kind == SegLoss::dice) return dice;
    return bce + dice;
}

Raster binarize(const Raster& probability_map, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ValidationError("binarize threshold must be in (0,1)");
    Raster out(probability_map.width, probability_map.height, 0.f,
               probability_map.resolution_um);
    for (size_t i = 0; i < out.size(); ++i)
        out.data[i] = probability_map.data[i] >= threshold ? 1.f : 0.f;
    return out;
}

torch::Tensor raster_to_tensor(const Raster& r) {
    auto t = torch::from_blob(const_cast<float*>(r.data.data()),
                              {1, r.height, r.width}, torch::kFloat32);
    return t.clone();
}

Raster tensor_to_raster(const torch::Tensor& t, double resolution_um) {
    auto s = t.squeeze().contiguous().to(torch::kFloat32);
    if (s.dim() != 2) throw ValidationError("tensor_to_raster expects a 2-D map");
    Raster r(int(s.size(1)), int(s.size(0)), 0.f, resolution_um);
    std::memcpy(r.data.data(), s.data_ptr<float>(), r.size() * sizeof(float));
    return r;
}

}  // namespace d2c
