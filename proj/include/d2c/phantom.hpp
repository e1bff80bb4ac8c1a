#pragma once

#include "d2c/raster.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace d2c {

enum class ArtifactKind {
    unspecific_ck,       // spurious CK signal in stroma
    ck_expression_loss,  // epithelium with suppressed CK staining
    necrotic_ck,         // CK-positive region with depleted DAPI
    dapi_artifact        // corrupted DAPI (saturated blob)
};

std::string to_string(ArtifactKind k);
ArtifactKind artifact_kind_from_string(const std::string& s);

struct ArtifactAnnotation {
    ArtifactKind kind;
    Raster region_mask;  // {0,1}, same geometry as the sample
    int cx = 0, cy = 0;
    double radius = 0;
};

struct ArtifactKindConfig {
    double probability = 0.0;  // per sample
    int max_count = 1;
    double radius_min = 16.0;
    double radius_max = 40.0;
};

// Explicitly placed artifact, used for controlled experiments and tests.
struct ArtifactPlacement {
    ArtifactKind kind;
    int cx = 0, cy = 0;
    double radius = 0;
};

struct ArtifactConfig {
    ArtifactKindConfig unspecific;
    ArtifactKindConfig expression_loss;
    ArtifactKindConfig necrotic;
    ArtifactKindConfig dapi_artifact;
    std::vector<ArtifactPlacement> placements;
    uint64_t seed = 0;

    bool any() const;
    static ArtifactConfig none() { return {}; }
    nlohmann::json to_json() const;
    static ArtifactConfig from_json(const nlohmann::json& j);
};

struct PhantomSpec {
    int width = 256;
    int height = 256;
    double resolution_um = 0.5;
    double epithelial_fraction = 0.35;
    // Epithelial nuclei are denser and larger than stromal ones; the gap in
    // both cues is what makes the DAPI->CK mapping learnable, so the default
    // ranges overlap only slightly.
    double nucleus_density_epithelial = 40.0;  // nuclei per 100x100 px
    double nucleus_density_stromal = 5.0;
    double nucleus_radius_min_epi = 4.0, nucleus_radius_max_epi = 6.5;
    double nucleus_radius_min_str = 2.0, nucleus_radius_max_str = 3.5;
    double ck_halo_radius = 10.0;  // px
    double noise_level = 0.05;    // in [0,1)
    ArtifactConfig artifact_config;
    uint64_t seed = 0;

    void validate() const;  // throws ValidationError naming the invariant
    nlohmann::json to_json() const;
    static PhantomSpec from_json(const nlohmann::json& j);
};

struct Nucleus {
    double x = 0, y = 0;
    double rx = 0, ry = 0;  // semi-axes
    double angle = 0;
    bool epithelial = false;
};

// Paired DAPI / CK rasters with ground truth. ck_true is the clean CK implied
// by nuclear morphology; ck_stained plays the role of the physically stained
// channel and differs from ck_true exactly on artifact regions.
struct PhantomSample {
    Raster dapi;
    Raster ck_true;
    Raster ck_stained;
    Raster epithelium_mask;  // {0,1}
    std::vector<ArtifactAnnotation> artifacts;
    std::vector<Nucleus> nuclei;
};

PhantomSample generate_phantom(const PhantomSpec& spec);

PhantomSample inject_artifacts(const PhantomSample& sample,
                               const ArtifactConfig& config);

struct DatasetManifest {
    struct Entry {
        std::string id;
        uint64_t seed = 0;
        std::string split;  // train | val | test
        std::map<std::string, std::string> files;  // role -> relative path
        bool has_artifacts = false;
    };
    uint64_t master_seed = 0;
    nlohmann::json spec_template;
    std::vector<Entry> entries;

    std::vector<const Entry*> split(const std::string& name) const;
    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
    static DatasetManifest load(const std::string& path);
    void save(const std::string& path) const;
};

// Deterministic per-sample seed stream from a master seed.
uint64_t derive_seed(uint64_t master_seed, uint64_t index);

// Generates n samples under out_dir with floor-for-train split rounding
// (val gets floor, test the remainder). Existing complete samples are kept,
// making interrupted runs resumable.
DatasetManifest build_phantom_dataset(const PhantomSpec& spec_template,
                                      int n_samples, const std::string& out_dir,
                                      double train_frac = 0.8,
                                      double val_frac = 0.1);

PhantomSample load_sample(const std::string& dataset_dir,
                          const DatasetManifest::Entry& entry);

}  // namespace d2c
