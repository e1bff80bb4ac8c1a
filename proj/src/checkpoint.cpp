#include "d2c/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace d2c {

namespace fs = std::filesystem;
using nlohmann::json;

json EpochRecord::to_json() const {
    json j;
    j["epoch"] = epoch;
    for (auto& [k, v] : values) j[k] = v;
    return j;
}

EpochRecord EpochRecord::from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch");
    for (auto& [k, v] : j.items())
        if (k != "epoch") r.values[k] = v.get<double>();
    return r;
}

namespace {

constexpr char kMagic[] = "D2CKPT01\n";

std::vector<torch::Tensor> ordered_params(const torch::nn::Module& m,
                                          std::vector<std::string>* names) {
    std::vector<torch::Tensor> out;
    for (auto& p : m.named_parameters(/*recurse=*/true)) {
        if (names) names->push_back(p.key());
        out.push_back(p.value());
    }
    return out;
}

void write_file(const std::string& path, const json& header,
                const std::vector<torch::Tensor>& tensors) {
    std::ostringstream blob;
    {
        std::vector<torch::Tensor> cpu;
        for (auto& t : tensors) cpu.push_back(t.detach().cpu());
        torch::save(cpu, blob);
    }
    std::string hdr = header.dump();
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
        f.write(kMagic, sizeof(kMagic) - 1);
        uint64_t n = hdr.size();
        f.write(reinterpret_cast<const char*>(&n), sizeof(n));
        f.write(hdr.data(), std::streamsize(hdr.size()));
        const std::string& b = blob.str();
        f.write(b.data(), std::streamsize(b.size()));
        if (!f) throw std::runtime_error("short write on checkpoint: " + path);
    }
    fs::rename(tmp, p);
}

std::pair<json, std::vector<torch::Tensor>> read_file(const std::string& path,
                                                      bool with_tensors) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string hdr(n, '\0');
    f.read(hdr.data(), std::streamsize(n));
    if (!f) throw ValidationError("truncated checkpoint header: " + path);
    json header = json::parse(hdr);

    std::vector<torch::Tensor> tensors;
    if (with_tensors) {
        std::stringstream blob;
        blob << f.rdbuf();
        torch::load(tensors, blob);
    }
    return {header, tensors};
}

void load_into(torch::nn::Module& m, const std::vector<torch::Tensor>& tensors,
               size_t offset, size_t count, const std::string& what) {
    auto params = ordered_params(m, nullptr);
    if (params.size() != count)
        throw ValidationError("checkpoint parameter count mismatch for " + what);
    torch::NoGradGuard ng;
    for (size_t i = 0; i < count; ++i) {
        if (params[i].sizes() != tensors[offset + i].sizes())
            throw ValidationError("checkpoint tensor shape mismatch for " + what);
        params[i].copy_(tensors[offset + i]);
    }
}

json log_to_json(const std::vector<EpochRecord>& log) {
    json j = json::array();
    for (auto& r : log) j.push_back(r.to_json());
    return j;
}

std::vector<EpochRecord> log_from_json(const json& j) {
    std::vector<EpochRecord> log;
    for (auto& r : j) log.push_back(EpochRecord::from_json(r));
    return log;
}

}  // namespace

void save_checkpoint(const TranslationCheckpoint& ckpt, const std::string& path) {
    json header;
    header["kind"] = "translation";
    header["format_version"] = ckpt.format_version;
    header["generator_config"] = ckpt.generator_config.to_json();
    if (ckpt.discriminator_config)
        header["discriminator_config"] = ckpt.discriminator_config->to_json();
    header["train_config"] = ckpt.train_config.to_json();
    header["training_log"] = log_to_json(ckpt.training_log);

    std::vector<std::string> gnames, dnames;
    auto tensors = ordered_params(*ckpt.generator, &gnames);
    if (ckpt.discriminator) {
        auto dt = ordered_params(*ckpt.discriminator, &dnames);
        tensors.insert(tensors.end(), dt.begin(), dt.end());
    }
    header["generator_params"] = gnames;
    header["discriminator_params"] = dnames;
    write_file(path, header, tensors);
}

TranslationCheckpoint load_translation_checkpoint(const std::string& path) {
    auto [header, tensors] = read_file(path, true);
    if (header.value("kind", "") != "translation")
        throw ValidationError("checkpoint kind mismatch: expected translation");
    int version = header.at("format_version");
    if (version > kCheckpointFormatVersion)
        throw ValidationError("checkpoint format_version " +
                                 std::to_string(version) + " is newer than supported");
    TranslationCheckpoint c;
    c.format_version = version;
    c.generator_config = GeneratorConfig::from_json(header.at("generator_config"));
    c.train_config = TrainConfig::from_json(header.at("train_config"));
    c.training_log = log_from_json(header.value("training_log", json::array()));

    size_t gcount = header.at("generator_params").size();
    c.generator = Generator(c.generator_config);
    load_into(*c.generator, tensors, 0, gcount, "generator");
    c.generator->eval();
    if (header.contains("discriminator_config")) {
        c.discriminator_config =
            DiscriminatorConfig::from_json(header["discriminator_config"]);
        c.discriminator = Discriminator(*c.discriminator_config);
        load_into(*c.discriminator, tensors, gcount,
                  header.at("discriminator_params").size(), "discriminator");
        c.discriminator->eval();
    }
    return c;
}

void save_checkpoint(const SegCheckpoint& ckpt, const std::string& path) {
    json header;
    header["kind"] = "segmentation";
    header["format_version"] = ckpt.format_version;
    header["seg_config"] = ckpt.seg_config.to_json();
    header["training_log"] = log_to_json(ckpt.training_log);
    std::vector<std::string> names;
    auto tensors = ordered_params(*ckpt.segmenter, &names);
    header["segmenter_params"] = names;
    write_file(path, header, tensors);
}

SegCheckpoint load_seg_checkpoint(const std::string& path) {
    auto [header, tensors] = read_file(path, true);
    if (header.value("kind", "") != "segmentation")
        throw ValidationError("checkpoint kind mismatch: expected segmentation");
    int version = header.at("format_version");
    if (version > kCheckpointFormatVersion)
        throw ValidationError("checkpoint format_version " +
                                 std::to_string(version) + " is newer than supported");
    SegCheckpoint c;
    c.format_version = version;
    c.seg_config = SegConfig::from_json(header.at("seg_config"));
    c.training_log = log_from_json(header.value("training_log", json::array()));
    c.segmenter = Segmenter(c.seg_config);
    load_into(*c.segmenter, tensors, 0, header.at("segmenter_params").size(),
              "segmenter");
    c.segmenter->eval();
    return c;
}

json checkpoint_header(const std::string& path) {
    return read_file(path, false).first;
}

}  // namespace d2c
