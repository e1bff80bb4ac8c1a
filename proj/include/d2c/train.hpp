#pragma once

#include "d2c/checkpoint.hpp"
#include "d2c/phantom.hpp"

#include <string>
#include <vector>

namespace d2c {

enum class ChannelSelector { ck_true, ck_stained, synthetic_from_checkpoint };

std::string to_string(ChannelSelector s);
ChannelSelector channel_selector_from_string(const std::string& s);

// In-memory training split: percentile-normalized tensors in [-1,1] plus
// {0,1} mask tensors, one triple per sample.
struct PairedDataset {
    std::vector<torch::Tensor> dapi;    // (1,H,W)
    std::vector<torch::Tensor> target;  // (1,H,W) CK channel per selector
    std::vector<torch::Tensor> mask;    // (1,H,W)

    size_t size() const { return dapi.size(); }
};

// Loads a manifest split. For synthetic_from_checkpoint the target channel is
// produced by running the supplied dapi2ck generator on the DAPI channel.
PairedDataset load_split(const std::string& dataset_dir,
                         const DatasetManifest& manifest,
                         const std::string& split, ChannelSelector selector,
                         const std::string& dapi2ck_checkpoint_path = "");

// Mean absolute error of the generator over a dataset (center 256-crop),
// computed in the normalized [-1,1] domain.
double generator_mae(Generator& gen, const PairedDataset& data, int patch_size = 256);

// Pooled F1 of thresholded segmenter output against the mask channel.
double segmenter_f1(Segmenter& seg, const PairedDataset& data, double threshold,
                    int patch_size = 256);

struct TrainOptions {
    std::string checkpoint_path;  // written after every epoch; empty = no persist
    std::string log_path;         // JSONL, one object per epoch; empty = no log
    std::string resume_from;      // existing checkpoint to continue from
};

// Adversarial dapi2ck training. Per-epoch log records g_loss, d_loss, adv,
// l1 and val_l1; the returned checkpoint carries the best-val_l1 parameters.
TranslationCheckpoint train_dapi2ck(const std::string& dataset_dir,
                                    const DatasetManifest& manifest,
                                    const TrainConfig& tcfg,
                                    const GeneratorConfig& gcfg,
                                    const DiscriminatorConfig& dcfg,
                                    const TrainOptions& opts = {});

// Supervised epithelium segmentation training; best-val-F1 parameters kept.
SegCheckpoint train_segmentation(const std::string& dataset_dir,
                                 const DatasetManifest& manifest,
                                 const SegConfig& scfg, ChannelSelector selector,
                                 const std::string& dapi2ck_checkpoint_path = "",
                                 const TrainOptions& opts = {});

}  // namespace d2c
