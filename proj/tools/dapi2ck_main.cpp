// Command-line front end: phantom dataset generation, model training,
// two-step inference, evaluation, and overlay reports.
//
// Exit codes: 0 success, 2 config/validation error, 3 runtime/training error.

#include "d2c/metrics.hpp"
#include "d2c/phantom.hpp"
#include "d2c/pipeline.hpp"
#include "d2c/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace d2c;

namespace {

// Whole-experiment configuration with documented defaults; a JSON config file
// overrides defaults, command-line flags override the file.
json default_config() {
    PhantomSpec spec;
    json j;
    j["master_seed"] = 1234;
    j["out_dir"] = "runs/exp";
    j["phantom"] = spec.to_json();
    j["dataset"] = {{"n_samples", 64},
                    {"train_frac", 0.8},
                    {"val_frac", 0.1},
                    {"dir", ""}};  // default: <out_dir>/dataset
    j["translation"] = {{"generator", GeneratorConfig{}.to_json()},
                        {"discriminator", DiscriminatorConfig{}.to_json()},
                        {"train", TrainConfig{}.to_json()}};
    j["segmentation"] = SegConfig{}.to_json();
    j["segmentation"]["channel_selector"] = "ck_true";
    j["segmentation"]["dapi2ck_checkpoint"] = "";
    j["pipeline"] = {{"stride", 128}, {"blend", "cosine_ramp"}, {"threshold", 0.5}};
    return j;
}

void merge(json& base, const json& overlay) {
    for (auto& [k, v] : overlay.items()) {
        if (v.is_object() && base.contains(k) && base[k].is_object())
            merge(base[k], v);
        else
            base[k] = v;
    }
}

json load_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ValidationError("cannot open config file: " + path);
        json user;
        try {
            f >> user;
        } catch (const json::exception& e) {
            throw ValidationError("config parse error in " + path + ": " + e.what());
        }
        merge(cfg, user);
    }
    return cfg;
}

void write_snapshot(const json& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path p = fs::path(out_dir) / "config_snapshot.json";
    fs::path tmp = p;
    tmp += ".tmp";
    std::ofstream f(tmp);
    if (!f) throw ValidationError("output directory not writable: " + out_dir);
    f << cfg.dump(2) << "\n";
    f.close();
    fs::rename(tmp, p);
}

Blend blend_from_string(const std::string& s) {
    if (s == "uniform_average") return Blend::uniform_average;
    if (s == "cosine_ramp") return Blend::cosine_ramp;
    throw ValidationError("unknown blend: " + s);
}

void write_json(const json& j, const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    std::ofstream f(tmp);
    f << j.dump(2) << "\n";
    f.close();
    fs::rename(tmp, p);
}

std::string dataset_dir(const json& cfg) {
    std::string d = cfg["dataset"].value("dir", "");
    if (!d.empty()) return d;
    return (fs::path(cfg["out_dir"].get<std::string>()) / "dataset").string();
}

int cmd_generate_phantoms(const json& cfg) {
    PhantomSpec spec = PhantomSpec::from_json(cfg["phantom"]);
    spec.seed = cfg["master_seed"];
    std::string dir = dataset_dir(cfg);
    write_snapshot(cfg, cfg["out_dir"]);
    auto manifest =
        build_phantom_dataset(spec, cfg["dataset"]["n_samples"], dir,
                              cfg["dataset"]["train_frac"], cfg["dataset"]["val_frac"]);
    std::cout << "wrote " << manifest.entries.size() << " samples to " << dir
              << "\n";
    return 0;
}

int cmd_train(const std::string& which, const json& cfg,
              const std::string& resume) {
    std::string out_dir = cfg["out_dir"];
    write_snapshot(cfg, out_dir);
    std::string dir = dataset_dir(cfg);
    auto manifest = DatasetManifest::load((fs::path(dir) / "manifest.json").string());

    TrainOptions opts;
    opts.resume_from = resume;
    if (which == "dapi2ck") {
        TrainConfig tcfg = TrainConfig::from_json(cfg["translation"]["train"]);
        if (tcfg.seed == 0) tcfg.seed = cfg["master_seed"].get<uint64_t>();
        auto gcfg = GeneratorConfig::from_json(cfg["translation"]["generator"]);
        auto dcfg = DiscriminatorConfig::from_json(cfg["translation"]["discriminator"]);
        opts.checkpoint_path = (fs::path(out_dir) / "dapi2ck.ckpt").string();
        opts.log_path = (fs::path(out_dir) / "dapi2ck_train.jsonl").string();
        auto ckpt = train_dapi2ck(dir, manifest, tcfg, gcfg, dcfg, opts);
        std::cout << "checkpoint: " << opts.checkpoint_path << "\n"
                  << "epochs logged: " << ckpt.training_log.size() << "\n";
    } else if (which == "segmentation") {
        SegConfig scfg = SegConfig::from_json(cfg["segmentation"]);
        if (scfg.seed == 0) scfg.seed = cfg["master_seed"].get<uint64_t>();
        auto selector = channel_selector_from_string(
            cfg["segmentation"].value("channel_selector", "ck_true"));
        std::string gen_ckpt = cfg["segmentation"].value("dapi2ck_checkpoint", "");
        if (selector == ChannelSelector::synthetic_from_checkpoint && gen_ckpt.empty())
            throw ValidationError(
                "segmentation.dapi2ck_checkpoint is required when channel_selector "
                "is synthetic_from_checkpoint");
        opts.checkpoint_path = (fs::path(out_dir) / "segmentation.ckpt").string();
        opts.log_path = (fs::path(out_dir) / "segmentation_train.jsonl").string();
        auto ckpt = train_segmentation(dir, manifest, scfg, selector, gen_ckpt, opts);
        std::cout << "checkpoint: " << opts.checkpoint_path << "\n"
                  << "epochs logged: " << ckpt.training_log.size() << "\n";
    } else {
        throw ValidationError("train target must be dapi2ck or segmentation");
    }
    return 0;
}

int cmd_infer(const json& cfg, const std::string& dapi_path,
              const std::string& gen_ckpt, const std::string& seg_ckpt,
              const std::string& out_dir) {
    if (!fs::exists(gen_ckpt))
        throw ValidationError("dapi2ck checkpoint not found: " + gen_ckpt);
    if (!fs::exists(seg_ckpt))
        throw ValidationError("segmentation checkpoint not found: " + seg_ckpt);
    if (!fs::exists(dapi_path))
        throw ValidationError("DAPI input not found: " + dapi_path);
    write_snapshot(cfg, out_dir);

    Raster dapi = load_png16(dapi_path);
    TwoStepOptions opts;
    opts.stride = cfg["pipeline"]["stride"];
    opts.blend = blend_from_string(cfg["pipeline"]["blend"]);
    opts.threshold = cfg["pipeline"]["threshold"];

    // Artifact annotations, when the input directory carries them, make the
    // DAPI-artifact caveat observable in the sidecar.
    std::vector<ArtifactAnnotation> artifacts;
    fs::path art_path = fs::path(dapi_path).parent_path() /
                        (fs::path(dapi_path).filename().string().substr(
                             0, fs::path(dapi_path).filename().string().find("_dapi")) +
                         "_artifacts.json");
    std::string mask_path = art_path.string();
    mask_path = mask_path.substr(0, mask_path.find("_artifacts.json")) + "_mask.png";
    if (fs::exists(art_path) && fs::exists(mask_path)) {
        Raster epi = load_mask8(mask_path);
        std::ifstream f(art_path);
        json aj;
        f >> aj;
        for (auto& a : aj) {
            ArtifactKind kind = artifact_kind_from_string(a.at("kind"));
            // Rebuild region as disk around the recorded center.
            int cx = a.at("cx"), cy = a.at("cy");
            double radius = a.at("radius");
            Raster region(dapi.width, dapi.height);
            for (int y = 0; y < dapi.height; ++y)
                for (int x = 0; x < dapi.width; ++x) {
                    double dx = x - cx, dy = y - cy;
                    if (dx * dx + dy * dy <= radius * radius) region.at(x, y) = 1.f;
                }
            artifacts.push_back({kind, std::move(region), cx, cy, radius});
        }
        opts.artifacts = &artifacts;
    }

    auto res = run_two_step_from_checkpoints(dapi, gen_ckpt, seg_ckpt, opts);

    fs::create_directories(out_dir);
    std::string stem = fs::path(dapi_path).stem().string();
    auto base = stem.substr(0, stem.find("_dapi"));
    save_png16(res.synthetic_ck, (fs::path(out_dir) / (base + "_synthetic_ck.png")).string());
    Raster prob8(res.probability_map.width, res.probability_map.height);
    for (size_t i = 0; i < prob8.size(); ++i)
        prob8.data[i] = std::round(255.f * res.probability_map.data[i]);
    save_png8(prob8, (fs::path(out_dir) / (base + "_probability.png")).string());
    save_mask8(res.epithelium_mask, (fs::path(out_dir) / (base + "_mask.png")).string());
    write_json(res.sidecar, (fs::path(out_dir) / (base + "_sidecar.json")).string());
    std::cout << "outputs written to " << out_dir << "\n";
    return 0;
}

std::map<std::string, Raster> load_mask_dir(const std::string& dir,
                                            const std::string& suffix) {
    std::map<std::string, Raster> masks;
    if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
    for (auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > suffix.size() &&
            name.ends_with(suffix)) {
            std::string id = name.substr(0, name.size() - suffix.size());
            masks.emplace(id, load_mask8(e.path().string()));
        }
    }
    if (masks.empty())
        throw ValidationError("no '*" + suffix + "' masks found in " + dir);
    return masks;
}

json evaluation_to_json(const EvaluationResult& r) {
    json j;
    j["per_fov"] = json::array();
    for (auto& m : r.per_fov) j["per_fov"].push_back(m.to_json());
    j["pooled"] = r.pooled.to_json();
    return j;
}

int cmd_evaluate(const json& cfg, const std::string& mode,
                 const std::string& pred_dir, const std::string& ref_dir,
                 const std::string& stained_dir, const std::string& out_path) {
    json out;
    std::vector<TableRow> rows;
    if (mode == "vs_annotations" || mode == "synthetic_vs_stained") {
        auto pred = load_mask_dir(pred_dir, "_mask.png");
        auto ref = load_mask_dir(ref_dir, "_mask.png");
        auto res = mode == "vs_annotations"
                       ? evaluate_against_annotations(pred, ref)
                       : compare_synthetic_vs_stained(pred, ref);
        out = evaluation_to_json(res);
        rows.push_back({mode, res.pooled});
    } else if (mode == "table") {
        // Three Table-style rows: stained vs annotations, synthetic vs
        // annotations, synthetic vs stained.
        auto ann = load_mask_dir(ref_dir, "_mask.png");
        auto syn = load_mask_dir(pred_dir, "_mask.png");
        auto sta = load_mask_dir(stained_dir, "_mask.png");
        auto r1 = evaluate_against_annotations(sta, ann);
        auto r2 = evaluate_against_annotations(syn, ann);
        auto r3 = compare_synthetic_vs_stained(syn, sta);
        out["stained_vs_annotations"] = evaluation_to_json(r1);
        out["synthetic_vs_annotations"] = evaluation_to_json(r2);
        out["synthetic_vs_stained"] = evaluation_to_json(r3);
        rows = {{"stained CK vs. annotations", r1.pooled},
                {"synthetic CK vs. annotations", r2.pooled},
                {"synthetic vs. stained CK", r3.pooled}};
    } else {
        throw ValidationError("unknown evaluate mode: " + mode);
    }
    std::cout << render_table(rows);
    if (!out_path.empty()) write_json(out, out_path);
    (void)cfg;
    return 0;
}

// Mask boundary: positive pixels with at least one non-positive 4-neighbor.
Raster mask_boundary(const Raster& mask) {
    Raster b(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y) <= 0.5f) continue;
            bool edge = x == 0 || y == 0 || x == mask.width - 1 ||
                        y == mask.height - 1 || mask.at(x - 1, y) <= 0.5f ||
                        mask.at(x + 1, y) <= 0.5f || mask.at(x, y - 1) <= 0.5f ||
                        mask.at(x, y + 1) <= 0.5f;
            if (edge) b.at(x, y) = 1.f;
        }
    return b;
}

int cmd_report(const std::string& run_dir) {
    if (!fs::is_directory(run_dir))
        throw ValidationError("run directory not found: " + run_dir);
    int made = 0;
    for (auto& e : fs::directory_iterator(run_dir)) {
        std::string name = e.path().filename().string();
        if (!name.ends_with("_synthetic_ck.png")) continue;
        std::string base = name.substr(0, name.size() - strlen("_synthetic_ck.png"));
        fs::path mask_path = fs::path(run_dir) / (base + "_mask.png");
        if (!fs::exists(mask_path)) continue;

        Raster ck = load_png16(e.path().string());
        Raster boundary = mask_boundary(load_mask8(mask_path.string()));
        std::vector<uint8_t> bgr(size_t(ck.width) * ck.height * 3);
        for (int y = 0; y < ck.height; ++y)
            for (int x = 0; x < ck.width; ++x) {
                size_t i = (size_t(y) * ck.width + x) * 3;
                uint8_t g = uint8_t(std::lround(ck.at(x, y) / 257.0));
                if (boundary.at(x, y) > 0.5f) {
                    bgr[i] = 0; bgr[i + 1] = 0; bgr[i + 2] = 255;  // red contour
                } else {
                    bgr[i] = bgr[i + 1] = bgr[i + 2] = g;
                }
            }
        save_rgb8(bgr, ck.width, ck.height,
                  (fs::path(run_dir) / (base + "_overlay.png")).string());
        ++made;

        // Synthetic-vs-stained difference heatmap, when the stained channel
        // is available next to the run outputs.
        fs::path stained = fs::path(run_dir) / (base + "_ck_stained.png");
        if (fs::exists(stained)) {
            Raster st = load_png16(stained.string());
            if (st.same_shape(ck)) {
                std::vector<uint8_t> heat(size_t(ck.width) * ck.height * 3);
                for (size_t i = 0; i < ck.size(); ++i) {
                    double d = (double(ck.data[i]) - st.data[i]) / 65535.0;
                    uint8_t m = uint8_t(std::lround(std::min(1.0, std::abs(d) * 2) * 255));
                    heat[i * 3] = d < 0 ? m : 0;       // blue: synthetic below stained
                    heat[i * 3 + 1] = 0;
                    heat[i * 3 + 2] = d > 0 ? m : 0;   // red: synthetic above stained
                }
                save_rgb8(heat, ck.width, ck.height,
                          (fs::path(run_dir) / (base + "_diff_heatmap.png")).string());
            }
        }
    }
    if (made == 0)
        throw ValidationError("no inference outputs found in " + run_dir);
    std::cout << "wrote " << made << " overlay image(s)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"DAPI-to-CK synthesis and epithelium segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_override, which, resume;
    std::optional<uint64_t> seed_override;
    std::optional<int> stride_override;
    std::optional<double> threshold_override;
    std::optional<int> n_override;

    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed_override, "override master_seed");
    app.add_option("--out", out_override, "override out_dir");

    auto* gen = app.add_subcommand("generate-phantoms",
                                   "build a phantom dataset with manifest");
    gen->add_option("--n", n_override, "override dataset.n_samples");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("which", which, "dapi2ck | segmentation")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");

    std::string dapi_path, gen_ckpt, seg_ckpt, infer_out;
    auto* infer = app.add_subcommand("infer", "two-step inference on a DAPI slide");
    infer->add_option("--dapi", dapi_path, "16-bit DAPI PNG")->required();
    infer->add_option("--dapi2ck-checkpoint", gen_ckpt)->required();
    infer->add_option("--seg-checkpoint", seg_ckpt)->required();
    infer->add_option("--stride", stride_override, "tile stride");
    infer->add_option("--threshold", threshold_override, "binarization threshold");

    std::string mode = "vs_annotations", pred_dir, ref_dir, stained_dir, eval_out;
    auto* eval = app.add_subcommand("evaluate", "pixel metrics between mask sets");
    eval->add_option("--mode", mode, "vs_annotations | synthetic_vs_stained | table");
    eval->add_option("--pred", pred_dir, "predicted masks dir (synthetic for table)");
    eval->add_option("--ref", ref_dir, "reference/annotation masks dir");
    eval->add_option("--stained", stained_dir, "stained-CK masks dir (table mode)");
    eval->add_option("--json-out", eval_out, "metrics JSON output path");

    std::string run_dir;
    auto* report = app.add_subcommand("report", "render overlays for a run dir");
    report->add_option("--run", run_dir, "inference output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        json cfg = load_config(config_path);
        if (seed_override) cfg["master_seed"] = *seed_override;
        if (!out_override.empty()) cfg["out_dir"] = out_override;
        if (stride_override) cfg["pipeline"]["stride"] = *stride_override;
        if (threshold_override) cfg["pipeline"]["threshold"] = *threshold_override;
        if (n_override) cfg["dataset"]["n_samples"] = *n_override;

        if (gen->parsed()) return cmd_generate_phantoms(cfg);
        if (train->parsed()) return cmd_train(which, cfg, resume);
        if (infer->parsed())
            return cmd_infer(cfg, dapi_path, gen_ckpt, seg_ckpt,
                             out_override.empty() ? cfg["out_dir"].get<std::string>()
                                                  : out_override);
        if (eval->parsed())
            return cmd_evaluate(cfg, mode, pred_dir, ref_dir, stained_dir, eval_out);
        if (report->parsed()) return cmd_report(run_dir);
    } catch (const ValidationError& e) {
        json err = {{"error", "validation"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        json err = {{"error", "runtime"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 3;
    }
    return 2;
}
