#include "d2c/train.hpp"

#include "d2c/metrics.hpp"
#include "d2c/tiling.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

namespace d2c {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ChannelSelector s) {
    switch (s) {
        case ChannelSelector::ck_true: return "ck_true";
        case ChannelSelector::ck_stained: return "ck_stained";
        case ChannelSelector::synthetic_from_checkpoint:
            return "synthetic_from_checkpoint";
    }
    throw std::logic_error("unknown channel selector");
}

ChannelSelector channel_selector_from_string(const std::string& s) {
    if (s == "ck_true") return ChannelSelector::ck_true;
    if (s == "ck_stained") return ChannelSelector::ck_stained;
    if (s == "synthetic_from_checkpoint")
        return ChannelSelector::synthetic_from_checkpoint;
    throw ValidationError("unknown channel_selector: " + s);
}

PairedDataset load_split(const std::string& dataset_dir,
                         const DatasetManifest& manifest,
                         const std::string& split, ChannelSelector selector,
                         const std::string& dapi2ck_checkpoint_path) {
    auto entries = manifest.split(split);
    if (entries.empty())
        throw ValidationError("manifest split '" + split + "' is empty");

    Generator gen = nullptr;
    if (selector == ChannelSelector::synthetic_from_checkpoint) {
        if (dapi2ck_checkpoint_path.empty())
            throw ValidationError(
                "channel_selector synthetic_from_checkpoint requires a dapi2ck "
                "checkpoint path");
        gen = load_translation_checkpoint(dapi2ck_checkpoint_path).generator;
    }

    PairedDataset data;
    torch::NoGradGuard ng;
    for (auto* e : entries) {
        PhantomSample s = load_sample(dataset_dir, *e);
        auto dapi = raster_to_tensor(normalize_intensity(s.dapi));
        torch::Tensor target;
        switch (selector) {
            case ChannelSelector::ck_true:
                target = raster_to_tensor(normalize_intensity(s.ck_true));
                break;
            case ChannelSelector::ck_stained:
                target = raster_to_tensor(normalize_intensity(s.ck_stained));
                break;
            case ChannelSelector::synthetic_from_checkpoint:
                target = gen->forward(dapi.unsqueeze(0)).squeeze(0);
                break;
        }
        data.dapi.push_back(dapi);
        data.target.push_back(target);
        data.mask.push_back(raster_to_tensor(s.epithelium_mask));
    }
    return data;
}

namespace {

// Deterministic center crop to patch geometry.
torch::Tensor center_patch(const torch::Tensor& t, int patch) {
    int64_t h = t.size(-2), w = t.size(-1);
    if (h < patch || w < patch)
        throw ValidationError("sample smaller than patch_size");
    int64_t y = (h - patch) / 2, x = (w - patch) / 2;
    return t.slice(-2, y, y + patch).slice(-1, x, x + patch);
}

torch::Tensor random_patch(const torch::Tensor& t, int patch, std::mt19937_64& rng) {
    int64_t h = t.size(-2), w = t.size(-1);
    if (h == patch && w == patch) return t;
    std::uniform_int_distribution<int64_t> dx(0, w - patch), dy(0, h - patch);
    int64_t x = dx(rng), y = dy(rng);
    return t.slice(-2, y, y + patch).slice(-1, x, x + patch);
}

std::vector<torch::Tensor> clone_params(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore_params(torch::nn::Module& m, const std::vector<torch::Tensor>& saved) {
    torch::NoGradGuard ng;
    auto params = m.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

void append_log_line(const std::string& path, const EpochRecord& rec) {
    if (path.empty()) return;
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::app);
    f << rec.to_json().dump() << "\n";
}

}  // namespace

double generator_mae(Generator& gen, const PairedDataset& data, int patch_size) {
    torch::NoGradGuard ng;
    gen->eval();
    double sum = 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
        auto x = center_patch(data.dapi[i], patch_size).unsqueeze(0);
        auto t = center_patch(data.target[i], patch_size).unsqueeze(0);
        sum += torch::l1_loss(gen->forward(x), t).item<double>();
    }
    return sum / double(data.size());
}

double segmenter_f1(Segmenter& seg, const PairedDataset& data, double threshold,
                    int patch_size) {
    torch::NoGradGuard ng;
    seg->eval();
    ConfusionCounts pooled;
    for (size_t i = 0; i < data.size(); ++i) {
        auto x = center_patch(data.target[i], patch_size).unsqueeze(0);
        auto prob = seg->forward_prob(x);
        Raster pm = tensor_to_raster(prob);
        Raster ref = tensor_to_raster(center_patch(data.mask[i], patch_size));
        pooled += confusion(binarize(pm, threshold), ref);
    }
    auto rep = metrics(pooled);
    return rep.f1.value_or(0.0);
}

TranslationCheckpoint train_dapi2ck(const std::string& dataset_dir,
                                    const DatasetManifest& manifest,
                                    const TrainConfig& tcfg,
                                    const GeneratorConfig& gcfg,
                                    const DiscriminatorConfig& dcfg,
                                    const TrainOptions& opts) {
    tcfg.validate();
    gcfg.validate();
    dcfg.validate();

    auto train = load_split(dataset_dir, manifest, "train",
                            ChannelSelector::ck_stained);
    auto val = load_split(dataset_dir, manifest, "val", ChannelSelector::ck_stained);

    TranslationCheckpoint ckpt;
    ckpt.generator_config = gcfg;
    ckpt.discriminator_config = dcfg;
    ckpt.train_config = tcfg;

    int start_epoch = 0;
    torch::manual_seed(tcfg.seed);
    if (!opts.resume_from.empty()) {
        auto prev = load_translation_checkpoint(opts.resume_from);
        if (!prev.discriminator)
            throw ValidationError("cannot resume from an inference-only checkpoint");
        ckpt.generator = prev.generator;
        ckpt.discriminator = prev.discriminator;
        ckpt.generator_config = prev.generator_config;
        ckpt.discriminator_config = prev.discriminator_config;
        ckpt.training_log = prev.training_log;
        if (!ckpt.training_log.empty())
            start_epoch = ckpt.training_log.back().epoch + 1;
    } else {
        ckpt.generator = Generator(gcfg);
        ckpt.discriminator = Discriminator(dcfg);
    }
    Generator gen = ckpt.generator;
    Discriminator disc = ckpt.discriminator;

    auto betas = std::make_tuple(tcfg.adam_beta1, 0.999);
    torch::optim::Adam g_opt(gen->parameters(),
                             torch::optim::AdamOptions(tcfg.learning_rate)
                                 .betas(betas));
    torch::optim::Adam d_opt(disc->parameters(),
                             torch::optim::AdamOptions(tcfg.learning_rate)
                                 .betas(betas));

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<torch::Tensor> best_params = clone_params(*gen);
    for (auto& r : ckpt.training_log)
        if (r.values.count("val_l1")) best_val = std::min(best_val, r.values["val_l1"]);

    auto persist = [&](bool use_best) {
        if (opts.checkpoint_path.empty()) return;
        if (use_best) restore_params(*gen, best_params);
        save_checkpoint(ckpt, opts.checkpoint_path);
    };

    const int n = int(train.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = start_epoch; epoch < start_epoch + tcfg.epochs; ++epoch) {
        std::mt19937_64 rng(tcfg.seed * 0x9E3779B9ULL + uint64_t(epoch) + 1);
        std::shuffle(order.begin(), order.end(), rng);
        gen->train();
        disc->train();
        double sum_g = 0, sum_d = 0, sum_adv = 0, sum_l1 = 0;
        int batches = 0;
        try {
            for (int b = 0; b < n; b += tcfg.batch_size) {
                std::vector<torch::Tensor> xs, ts;
                for (int i = b; i < std::min(n, b + tcfg.batch_size); ++i) {
                    uint64_t cs = rng();
                    std::mt19937_64 r1(cs), r2(cs);  // aligned crops across channels
                    xs.push_back(random_patch(train.dapi[order[i]], tcfg.patch_size, r1));
                    ts.push_back(
                        random_patch(train.target[order[i]], tcfg.patch_size, r2));
                }
                auto x = torch::stack(xs);
                auto t = torch::stack(ts);

                auto fake = gen->forward(x);

                d_opt.zero_grad();
                auto logits_real = disc->forward(x, t);
                auto logits_fake = disc->forward(x, fake.detach());
                auto d_loss =
                    0.5 * (torch::mse_loss(logits_real, torch::ones_like(logits_real)) +
                           torch::mse_loss(logits_fake, torch::zeros_like(logits_fake)));
                if (!torch::isfinite(d_loss).item<bool>())
                    throw TrainingDivergence("d_loss", "non-finite d_loss");
                d_loss.backward();
                d_opt.step();

                g_opt.zero_grad();
                auto logits_g = disc->forward(x, fake);
                auto adv = torch::mse_loss(logits_g, torch::ones_like(logits_g));
                auto l1 = torch::l1_loss(fake, t);
                auto g_loss = adv + tcfg.lambda_l1 * l1;
                if (!torch::isfinite(g_loss).item<bool>())
                    throw TrainingDivergence("g_loss", "non-finite g_loss");
                g_loss.backward();
                g_opt.step();

                sum_g += g_loss.item<double>();
                sum_d += d_loss.item<double>();
                sum_adv += adv.item<double>();
                sum_l1 += l1.item<double>();
                ++batches;
            }
        } catch (const TrainingDivergence&) {
            persist(true);
            throw;
        }

        double val_l1 = generator_mae(gen, val, tcfg.patch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.values = {{"g_loss", sum_g / batches},
                      {"d_loss", sum_d / batches},
                      {"adv", sum_adv / batches},
                      {"l1", sum_l1 / batches},
                      {"val_l1", val_l1}};
        ckpt.training_log.push_back(rec);
        append_log_line(opts.log_path, rec);

        if (val_l1 < best_val) {
            best_val = val_l1;
            best_params = clone_params(*gen);
        }
        if (!opts.checkpoint_path.empty()) {
            // Persist best-so-far generator without disturbing the live one.
            auto live = clone_params(*gen);
            restore_params(*gen, best_params);
            save_checkpoint(ckpt, opts.checkpoint_path);
            restore_params(*gen, live);
        }
    }

    restore_params(*gen, best_params);
    gen->eval();
    disc->eval();
    return ckpt;
}

SegCheckpoint train_segmentation(const std::string& dataset_dir,
                                 const DatasetManifest& manifest,
                                 const SegConfig& scfg, ChannelSelector selector,
                                 const std::string& dapi2ck_checkpoint_path,
                                 const TrainOptions& opts) {
    scfg.validate();
    auto train = load_split(dataset_dir, manifest, "train", selector,
                            dapi2ck_checkpoint_path);
    auto val = load_split(dataset_dir, manifest, "val", selector,
                          dapi2ck_checkpoint_path);

    SegCheckpoint ckpt;
    ckpt.seg_config = scfg;

    int start_epoch = 0;
    torch::manual_seed(scfg.seed);
    if (!opts.resume_from.empty()) {
        auto prev = load_seg_checkpoint(opts.resume_from);
        ckpt.segmenter = prev.segmenter;
        ckpt.seg_config = prev.seg_config;
        ckpt.training_log = prev.training_log;
        if (!ckpt.training_log.empty())
            start_epoch = ckpt.training_log.back().epoch + 1;
    } else {
        ckpt.segmenter = Segmenter(scfg);
    }
    Segmenter seg = ckpt.segmenter;
    torch::optim::Adam opt(seg->parameters(),
                           torch::optim::AdamOptions(scfg.learning_rate));

    double best_f1 = -1.0;
    std::vector<torch::Tensor> best_params = clone_params(*seg);
    for (auto& r : ckpt.training_log)
        if (r.values.count("val_f1")) best_f1 = std::max(best_f1, r.values["val_f1"]);

    const int patch = 256;
    const int n = int(train.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = start_epoch; epoch < start_epoch + scfg.epochs; ++epoch) {
        std::mt19937_64 rng(scfg.seed * 0x85EBCA6BULL + uint64_t(epoch) + 1);
        std::shuffle(order.begin(), order.end(), rng);
        seg->train();
        double sum_loss = 0;
        int batches = 0;
        try {
            for (int b = 0; b < n; b += scfg.batch_size) {
                std::vector<torch::Tensor> xs, ms;
                for (int i = b; i < std::min(n, b + scfg.batch_size); ++i) {
                    uint64_t cs = rng();
                    std::mt19937_64 r1(cs), r2(cs);
                    xs.push_back(random_patch(train.target[order[i]], patch, r1));
                    ms.push_back(random_patch(train.mask[order[i]], patch, r2));
                }
                opt.zero_grad();
                auto logits = seg->forward_logits(torch::stack(xs));
                auto loss = seg_loss(logits, torch::stack(ms), scfg.loss_kind);
                if (!torch::isfinite(loss).item<bool>())
                    throw TrainingDivergence("seg_loss", "non-finite segmentation loss");
                loss.backward();
                opt.step();
                sum_loss += loss.item<double>();
                ++batches;
            }
        } catch (const TrainingDivergence&) {
            if (!opts.checkpoint_path.empty()) {
                restore_params(*seg, best_params);
                save_checkpoint(ckpt, opts.checkpoint_path);
            }
            throw;
        }

        double val_f1 = segmenter_f1(seg, val, scfg.threshold, patch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.values = {{"train_loss", sum_loss / batches}, {"val_f1", val_f1}};
        ckpt.training_log.push_back(rec);
        append_log_line(opts.log_path, rec);

        if (val_f1 > best_f1) {
            best_f1 = val_f1;
            best_params = clone_params(*seg);
        }
        if (!opts.checkpoint_path.empty()) {
            auto live = clone_params(*seg);
            restore_params(*seg, best_params);
            save_checkpoint(ckpt, opts.checkpoint_path);
            restore_params(*seg, live);
        }
    }

    restore_params(*seg, best_params);
    seg->eval();
    return ckpt;
}

}  // namespace d2c
