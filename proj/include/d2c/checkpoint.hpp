#pragma once

#include "d2c/nets.hpp"

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace d2c {

constexpr int kCheckpointFormatVersion = 1;

struct EpochRecord {
    int epoch = 0;
    std::map<std::string, double> values;

    nlohmann::json to_json() const;
    static EpochRecord from_json(const nlohmann::json& j);
};

// dapi2ck model container. Discriminator is optional so inference-only
// exports stay loadable.
struct TranslationCheckpoint {
    GeneratorConfig generator_config;
    std::optional<DiscriminatorConfig> discriminator_config;
    TrainConfig train_config;
    std::vector<EpochRecord> training_log;
    int format_version = kCheckpointFormatVersion;

    Generator generator = nullptr;
    Discriminator discriminator = nullptr;  // null when config absent
};

struct SegCheckpoint {
    SegConfig seg_config;
    std::vector<EpochRecord> training_log;
    int format_version = kCheckpointFormatVersion;

    Segmenter segmenter = nullptr;
};

void save_checkpoint(const TranslationCheckpoint& ckpt, const std::string& path);
TranslationCheckpoint load_translation_checkpoint(const std::string& path);

void save_checkpoint(const SegCheckpoint& ckpt, const std::string& path);
SegCheckpoint load_seg_checkpoint(const std::string& path);

// Peek at a checkpoint's JSON header without materializing the networks.
nlohmann::json checkpoint_header(const std::string& path);

}  // namespace d2c
