#include "d2c/phantom.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

namespace d2c {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ArtifactKind k) {
    switch (k) {
        case ArtifactKind::unspecific_ck: return "unspecific_ck";
        case ArtifactKind::ck_expression_loss: return "ck_expression_loss";
        case ArtifactKind::necrotic_ck: return "necrotic_ck";
        case ArtifactKind::dapi_artifact: return "dapi_artifact";
    }
    throw std::logic_error("unknown artifact kind");
}

ArtifactKind artifact_kind_from_string(const std::string& s) {
    if (s == "unspecific_ck") return ArtifactKind::unspecific_ck;
    if (s == "ck_expression_loss") return ArtifactKind::ck_expression_loss;
    if (s == "necrotic_ck") return ArtifactKind::necrotic_ck;
    if (s == "dapi_artifact") return ArtifactKind::dapi_artifact;
    throw ValidationError("unknown artifact kind: " + s);
}

bool ArtifactConfig::any() const {
    return !placements.empty() || unspecific.probability > 0 ||
           expression_loss.probability > 0 || necrotic.probability > 0 ||
           dapi_artifact.probability > 0;
}

namespace {

json kind_cfg_to_json(const ArtifactKindConfig& c) {
    return {{"probability", c.probability},
            {"max_count", c.max_count},
            {"radius_min", c.radius_min},
            {"radius_max", c.radius_max}};
}

ArtifactKindConfig kind_cfg_from_json(const json& j) {
    ArtifactKindConfig c;
    c.probability = j.value("probability", 0.0);
    c.max_count = j.value("max_count", 1);
    c.radius_min = j.value("radius_min", 16.0);
    c.radius_max = j.value("radius_max", 40.0);
    return c;
}

}  // namespace

json ArtifactConfig::to_json() const {
    json j;
    j["unspecific_ck"] = kind_cfg_to_json(unspecific);
    j["ck_expression_loss"] = kind_cfg_to_json(expression_loss);
    j["necrotic_ck"] = kind_cfg_to_json(necrotic);
    j["dapi_artifact"] = kind_cfg_to_json(dapi_artifact);
    j["seed"] = seed;
    j["placements"] = json::array();
    for (auto& p : placements)
        j["placements"].push_back({{"kind", to_string(p.kind)},
                                   {"cx", p.cx},
                                   {"cy", p.cy},
                                   {"radius", p.radius}});
    return j;
}

ArtifactConfig ArtifactConfig::from_json(const json& j) {
    ArtifactConfig c;
    if (j.contains("unspecific_ck")) c.unspecific = kind_cfg_from_json(j["unspecific_ck"]);
    if (j.contains("ck_expression_loss"))
        c.expression_loss = kind_cfg_from_json(j["ck_expression_loss"]);
    if (j.contains("necrotic_ck")) c.necrotic = kind_cfg_from_json(j["necrotic_ck"]);
    if (j.contains("dapi_artifact")) c.dapi_artifact = kind_cfg_from_json(j["dapi_artifact"]);
    c.seed = j.value("seed", uint64_t(0));
    for (auto& p : j.value("placements", json::array()))
        c.placements.push_back({artifact_kind_from_string(p.at("kind")),
                                p.at("cx"), p.at("cy"), p.at("radius")});
    return c;
}

void PhantomSpec::validate() const {
    if (width < 32 || height < 32)
        throw ValidationError(
            "spec invariant violated: width and height must be >= 32 (got " +
            std::to_string(width) + "x" + std::to_string(height) + ")");
    if (epithelial_fraction < 0.0 || epithelial_fraction > 1.0)
        throw ValidationError(
            "spec invariant violated: epithelial_fraction must be in [0,1]");
    if (nucleus_density_epithelial <= 0 && nucleus_density_stromal <= 0)
        throw ValidationError(
            "spec invariant violated: at least one compartment needs density > 0");
    if (nucleus_density_epithelial <= nucleus_density_stromal)
        throw ValidationError(
            "spec invariant violated: nucleus_density_epithelial must exceed "
            "nucleus_density_stromal");
    if (noise_level < 0.0 || noise_level >= 1.0)
        throw ValidationError("spec invariant violated: noise_level must be in [0,1)");
    if (resolution_um <= 0)
        throw ValidationError("spec invariant violated: resolution must be > 0");
    if (nucleus_radius_min_epi > nucleus_radius_max_epi ||
        nucleus_radius_min_str > nucleus_radius_max_str)
        throw ValidationError("spec invariant violated: nucleus radius range inverted");
}

json PhantomSpec::to_json() const {
    return {{"width", width},
            {"height", height},
            {"resolution_um", resolution_um},
            {"epithelial_fraction", epithelial_fraction},
            {"nucleus_density_epithelial", nucleus_density_epithelial},
            {"nucleus_density_stromal", nucleus_density_stromal},
            {"nucleus_radius_min_epi", nucleus_radius_min_epi},
            {"nucleus_radius_max_epi", nucleus_radius_max_epi},
            {"nucleus_radius_min_str", nucleus_radius_min_str},
            {"nucleus_radius_max_str", nucleus_radius_max_str},
            {"ck_halo_radius", ck_halo_radius},
            {"noise_level", noise_level},
            {"artifact_config", artifact_config.to_json()},
            {"seed", seed}};
}

PhantomSpec PhantomSpec::from_json(const json& j) {
    PhantomSpec s;
    s.width = j.value("width", 256);
    s.height = j.value("height", 256);
    s.resolution_um = j.value("resolution_um", 0.5);
    s.epithelial_fraction = j.value("epithelial_fraction", 0.35);
    s.nucleus_density_epithelial = j.value("nucleus_density_epithelial", 30.0);
    s.nucleus_density_stromal = j.value("nucleus_density_stromal", 8.0);
    s.nucleus_radius_min_epi = j.value("nucleus_radius_min_epi", 3.0);
    s.nucleus_radius_max_epi = j.value("nucleus_radius_max_epi", 6.0);
    s.nucleus_radius_min_str = j.value("nucleus_radius_min_str", 2.0);
    s.nucleus_radius_max_str = j.value("nucleus_radius_max_str", 5.0);
    s.ck_halo_radius = j.value("ck_halo_radius", 8.0);
    s.noise_level = j.value("noise_level", 0.05);
    if (j.contains("artifact_config"))
        s.artifact_config = ArtifactConfig::from_json(j["artifact_config"]);
    s.seed = j.value("seed", uint64_t(0));
    return s;
}

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void quantize16(Raster& r) {
    for (auto& v : r.data)
        v = std::round(std::clamp(v, 0.f, 1.f) * 65535.f);
}

// Smoothed random blobs: bilinear interpolation of a coarse Gaussian grid,
// thresholded at the quantile that yields the requested coverage.
Raster epithelium_field(int w, int h, std::mt19937_64& rng) {
    const int cell = 80;
    int gw = w / cell + 3, gh = h / cell + 3;
    std::vector<double> grid(static_cast<size_t>(gw) * gh);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& g : grid) g = gauss(rng);

    Raster field(w, h);
    for (int y = 0; y < h; ++y) {
        double fy = double(y) / cell;
        int y0 = int(fy);
        double ty = fy - y0;
        for (int x = 0; x < w; ++x) {
            double fx = double(x) / cell;
            int x0 = int(fx);
            double tx = fx - x0;
            auto g = [&](int gx, int gy) {
                return grid[static_cast<size_t>(gy) * gw + gx];
            };
            double v = (1 - tx) * (1 - ty) * g(x0, y0) + tx * (1 - ty) * g(x0 + 1, y0) +
                       (1 - tx) * ty * g(x0, y0 + 1) + tx * ty * g(x0 + 1, y0 + 1);
            field.at(x, y) = float(v);
        }
    }
    return field;
}

Raster threshold_by_fraction(const Raster& field, double fraction) {
    Raster mask(field.width, field.height);
    if (fraction <= 0.0) return mask;
    if (fraction >= 1.0) {
        std::fill(mask.data.begin(), mask.data.end(), 1.f);
        return mask;
    }
    std::vector<float> v(field.data);
    size_t k = static_cast<size_t>(
        std::lround((1.0 - fraction) * double(v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + k, v.end());
    float t = v[k];
    for (size_t i = 0; i < mask.size(); ++i)
        mask.data[i] = field.data[i] >= t ? 1.f : 0.f;
    return mask;
}

std::vector<Nucleus> place_nuclei(const Raster& mask, const PhantomSpec& spec,
                                  std::mt19937_64& rng) {
    std::vector<size_t> epi_px, str_px;
    for (size_t i = 0; i < mask.size(); ++i)
        (mask.data[i] > 0.5f ? epi_px : str_px).push_back(i);

    std::vector<Nucleus> nuclei;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto place = [&](const std::vector<size_t>& px, double density, double rmin,
                     double rmax, bool epithelial) {
        if (px.empty() || density <= 0) return;
        double expected = density * double(px.size()) / 10000.0;
        std::poisson_distribution<int> pois(expected);
        int count = pois(rng);
        std::uniform_int_distribution<size_t> pick(0, px.size() - 1);
        for (int i = 0; i < count; ++i) {
            size_t idx = px[pick(rng)];
            Nucleus n;
            n.x = double(idx % mask.width) + uni(rng) - 0.5;
            n.y = double(idx / mask.width) + uni(rng) - 0.5;
            double r = rmin + (rmax - rmin) * uni(rng);
            double ecc = 0.7 + 0.3 * uni(rng);  // mild eccentricity jitter
            n.rx = r;
            n.ry = r * ecc;
            n.angle = uni(rng) * std::numbers::pi;
            n.epithelial = epithelial;
            nuclei.push_back(n);
        }
    };
    place(epi_px, spec.nucleus_density_epithelial, spec.nucleus_radius_min_epi,
          spec.nucleus_radius_max_epi, true);
    place(str_px, spec.nucleus_density_stromal, spec.nucleus_radius_min_str,
          spec.nucleus_radius_max_str, false);
    return nuclei;
}

// Additive anti-aliased ellipse rendering.
void render_nucleus(Raster& img, const Nucleus& n, float amp) {
    int pad = int(std::ceil(std::max(n.rx, n.ry))) + 2;
    int x0 = std::max(0, int(n.x) - pad), x1 = std::min(img.width - 1, int(n.x) + pad);
    int y0 = std::max(0, int(n.y) - pad), y1 = std::min(img.height - 1, int(n.y) + pad);
    double ca = std::cos(n.angle), sa = std::sin(n.angle);
    double soft = std::min(n.rx, n.ry);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = x - n.x, dy = y - n.y;
            double u = (dx * ca + dy * sa) / n.rx;
            double v = (-dx * sa + dy * ca) / n.ry;
            double e = std::sqrt(u * u + v * v);
            double cov = std::clamp((1.0 - e) * soft + 0.5, 0.0, 1.0);
            if (cov > 0) img.at(x, y) += float(amp * cov);
        }
}

Raster distance_to_epithelial_nuclei(const std::vector<Nucleus>& nuclei, int w,
                                     int h) {
    cv::Mat src(h, w, CV_8UC1, cv::Scalar(255));
    bool any = false;
    for (auto& n : nuclei) {
        if (!n.epithelial) continue;
        int x = std::clamp(int(std::lround(n.x)), 0, w - 1);
        int y = std::clamp(int(std::lround(n.y)), 0, h - 1);
        src.at<uint8_t>(y, x) = 0;
        any = true;
    }
    Raster d(w, h, std::numeric_limits<float>::max());
    if (!any) return d;
    cv::Mat dist;
    cv::distanceTransform(src, dist, cv::DIST_L2, cv::DIST_MASK_5);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d.at(x, y) = dist.at<float>(y, x);
    return d;
}

struct DiskRegion {
    Raster mask;
    int area = 0;
};

// Disk intersected with the kind's target compartment.
DiskRegion artifact_region(ArtifactKind kind, int cx, int cy, double radius,
                           const Raster& epi_mask) {
    DiskRegion reg;
    reg.mask = Raster(epi_mask.width, epi_mask.height);
    int x0 = std::max(0, int(cx - radius)), x1 = std::min(epi_mask.width - 1, int(cx + radius));
    int y0 = std::max(0, int(cy - radius)), y1 = std::min(epi_mask.height - 1, int(cy + radius));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy > radius * radius) continue;
            bool epi = epi_mask.at(x, y) > 0.5f;
            bool in_region;
            switch (kind) {
                case ArtifactKind::unspecific_ck:
                case ArtifactKind::necrotic_ck: in_region = !epi; break;
                case ArtifactKind::ck_expression_loss: in_region = epi; break;
                case ArtifactKind::dapi_artifact: in_region = true; break;
                default: in_region = false;
            }
            if (in_region) {
                reg.mask.at(x, y) = 1.f;
                ++reg.area;
            }
        }
    return reg;
}

bool modifies_ck(ArtifactKind k) {
    return k == ArtifactKind::unspecific_ck ||
           k == ArtifactKind::ck_expression_loss ||
           k == ArtifactKind::necrotic_ck;
}

// Smooth radial profile in [0.35, 1] (nonzero everywhere in the region so
// injected changes survive 16-bit quantization at every region pixel).
double radial_profile(double d, double radius) {
    double hann = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(d / radius, 1.0)));
    return 0.35 + 0.65 * hann;
}

void apply_artifact(PhantomSample& s, const ArtifactAnnotation& a) {
    for (int y = 0; y < s.ck_stained.height; ++y)
        for (int x = 0; x < s.ck_stained.width; ++x) {
            if (a.region_mask.at(x, y) <= 0.5f) continue;
            double d = std::hypot(x - a.cx, y - a.cy);
            double p = radial_profile(d, a.radius);
            double ck = s.ck_stained.at(x, y) / 65535.0;
            double dapi = s.dapi.at(x, y) / 65535.0;
            switch (a.kind) {
                case ArtifactKind::unspecific_ck:
                    ck = std::clamp(ck + 0.7 * p, 0.0, 1.0);
                    break;
                case ArtifactKind::ck_expression_loss:
                    ck *= 0.08;
                    break;
                case ArtifactKind::necrotic_ck:
                    ck = std::max(ck, 0.3 + 0.4 * p);
                    dapi *= 0.15;
                    break;
                case ArtifactKind::dapi_artifact:
                    dapi = 1.0;
                    break;
            }
            s.ck_stained.at(x, y) = std::round(float(ck * 65535.0));
            s.dapi.at(x, y) = std::round(float(dapi * 65535.0));
        }
}

}  // namespace

PhantomSample inject_artifacts(const PhantomSample& sample,
                               const ArtifactConfig& config) {
    PhantomSample out = sample;
    if (!config.any()) return out;

    const int w = sample.epithelium_mask.width, h = sample.epithelium_mask.height;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Occupancy of CK-modifying regions, used to reject contradictory overlap.
    Raster ck_occupied(w, h);

    auto add = [&](ArtifactKind kind, int cx, int cy, double radius,
                   bool explicit_placement) {
        if (explicit_placement &&
            (cx - radius < 0 || cy - radius < 0 || cx + radius >= w ||
             cy + radius >= h))
            throw ValidationError("artifact region does not fit within raster bounds");
        DiskRegion reg = artifact_region(kind, cx, cy, radius, out.epithelium_mask);
        if (reg.area == 0) {
            if (explicit_placement)
                throw ValidationError(
                    "artifact region empty: " + to_string(kind) +
                    " placement does not intersect its target compartment");
            return false;
        }
        if (modifies_ck(kind)) {
            for (size_t i = 0; i < reg.mask.size(); ++i)
                if (reg.mask.data[i] > 0.5f && ck_occupied.data[i] > 0.5f) {
                    if (explicit_placement)
                        throw ValidationError(
                            "overlapping contradictory artifacts at pixel level "
                            "(two CK-modifying regions share pixels)");
                    return false;
                }
            for (size_t i = 0; i < reg.mask.size(); ++i)
                if (reg.mask.data[i] > 0.5f) ck_occupied.data[i] = 1.f;
        }
        ArtifactAnnotation ann{kind, std::move(reg.mask), cx, cy, radius};
        apply_artifact(out, ann);
        out.artifacts.push_back(std::move(ann));
        return true;
    };

    for (auto& p : config.placements) add(p.kind, p.cx, p.cy, p.radius, true);

    auto random_kind = [&](ArtifactKind kind, const ArtifactKindConfig& kc) {
        for (int i = 0; i < kc.max_count; ++i) {
            if (uni(rng) >= kc.probability) continue;
            double radius = kc.radius_min + (kc.radius_max - kc.radius_min) * uni(rng);
            int margin = int(std::ceil(radius)) + 1;
            if (2 * margin >= w || 2 * margin >= h) continue;
            std::uniform_int_distribution<int> px(margin, w - 1 - margin);
            std::uniform_int_distribution<int> py(margin, h - 1 - margin);
            for (int attempt = 0; attempt < 200; ++attempt) {
                int cx = px(rng), cy = py(rng);
                bool epi = out.epithelium_mask.at(cx, cy) > 0.5f;
                bool want_epi = kind == ArtifactKind::ck_expression_loss;
                if (kind != ArtifactKind::dapi_artifact && epi != want_epi) continue;
                if (add(kind, cx, cy, radius, false)) break;
            }
        }
    };
    random_kind(ArtifactKind::unspecific_ck, config.unspecific);
    random_kind(ArtifactKind::ck_expression_loss, config.expression_loss);
    random_kind(ArtifactKind::necrotic_ck, config.necrotic);
    random_kind(ArtifactKind::dapi_artifact, config.dapi_artifact);
    return out;
}

PhantomSample generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int w = spec.width, h = spec.height;

    std::mt19937_64 rng_mask(splitmix64(spec.seed ^ 0x1111));
    std::mt19937_64 rng_nuc(splitmix64(spec.seed ^ 0x2222));
    std::mt19937_64 rng_noise(splitmix64(spec.seed ^ 0x3333));

    PhantomSample s;
    s.epithelium_mask = threshold_by_fraction(epithelium_field(w, h, rng_mask),
                                              spec.epithelial_fraction);
    s.epithelium_mask.resolution_um = spec.resolution_um;
    s.nuclei = place_nuclei(s.epithelium_mask, spec, rng_nuc);

    // DAPI: dim background + bright nuclei + Gaussian texture noise.
    s.dapi = Raster(w, h, 0.06f, spec.resolution_um);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (auto& n : s.nuclei)
        render_nucleus(s.dapi, n, float(0.5 + 0.4 * uni(rng_nuc)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (spec.noise_level > 0)
        for (auto& v : s.dapi.data)
            v += float(0.5 * spec.noise_level * gauss(rng_noise));
    quantize16(s.dapi);

    // Clean CK: exponential distance falloff around epithelial nuclei,
    // restricted to the epithelium, plus bounded in-mask noise.
    Raster dist = distance_to_epithelial_nuclei(s.nuclei, w, h);
    s.ck_true = Raster(w, h, 0.f, spec.resolution_um);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (s.epithelium_mask.at(x, y) <= 0.5f) continue;
            double halo = dist.at(x, y) > 1e18
                              ? 0.0
                              : std::exp(-double(dist.at(x, y)) / spec.ck_halo_radius);
            double n = spec.noise_level > 0
                           ? std::clamp(0.3 * spec.noise_level * gauss(rng_noise),
                                        -0.1, 0.1)
                           : 0.0;
            s.ck_true.at(x, y) = float(std::clamp(0.18 + 0.82 * halo + n, 0.0, 1.0));
        }
    quantize16(s.ck_true);

    s.ck_stained = s.ck_true;
    if (spec.artifact_config.any()) {
        ArtifactConfig ac = spec.artifact_config;
        if (ac.seed == 0) ac.seed = splitmix64(spec.seed ^ 0x4444);
        PhantomSample injected = inject_artifacts(s, ac);
        s = std::move(injected);
    }
    return s;
}

uint64_t derive_seed(uint64_t master_seed, uint64_t index) {
    return splitmix64(master_seed + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

std::vector<const DatasetManifest::Entry*> DatasetManifest::split(
    const std::string& name) const {
    std::vector<const Entry*> out;
    for (auto& e : entries)
        if (e.split == name) out.push_back(&e);
    return out;
}

json DatasetManifest::to_json() const {
    json j;
    j["master_seed"] = master_seed;
    j["spec_template"] = spec_template;
    j["samples"] = json::array();
    for (auto& e : entries)
        j["samples"].push_back({{"id", e.id},
                                {"seed", e.seed},
                                {"split", e.split},
                                {"files", e.files},
                                {"has_artifacts", e.has_artifacts}});
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    DatasetManifest m;
    m.master_seed = j.at("master_seed");
    m.spec_template = j.at("spec_template");
    for (auto& s : j.at("samples")) {
        Entry e;
        e.id = s.at("id");
        e.seed = s.at("seed");
        e.split = s.at("split");
        e.files = s.at("files").get<std::map<std::string, std::string>>();
        e.has_artifacts = s.value("has_artifacts", false);
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    json j;
    f >> j;
    return from_json(j);
}

void DatasetManifest::save(const std::string& path) const {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot write manifest: " + path);
        f << to_json().dump(2) << "\n";
    }
    fs::rename(tmp, p);
}

namespace {

json artifacts_to_json(const std::vector<ArtifactAnnotation>& arts) {
    json j = json::array();
    for (auto& a : arts)
        j.push_back({{"kind", to_string(a.kind)},
                     {"cx", a.cx},
                     {"cy", a.cy},
                     {"radius", a.radius}});
    return j;
}

}  // namespace

DatasetManifest build_phantom_dataset(const PhantomSpec& spec_template,
                                      int n_samples, const std::string& out_dir,
                                      double train_frac, double val_frac) {
    if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
        throw ValidationError("invalid split fractions");
    spec_template.validate();
    fs::create_directories(out_dir);

    // Split rounding: floor for train, floor for val, remainder to test.
    int n_train = int(std::floor(n_samples * train_frac));
    int n_val = int(std::floor(n_samples * val_frac));

    DatasetManifest manifest;
    manifest.master_seed = spec_template.seed;
    manifest.spec_template = spec_template.to_json();

    for (int i = 0; i < n_samples; ++i) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "s%05d", i);
        DatasetManifest::Entry e;
        e.id = idbuf;
        e.seed = derive_seed(spec_template.seed, uint64_t(i));
        e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        e.files = {{"dapi", e.id + "_dapi.png"},
                   {"ck_true", e.id + "_ck_true.png"},
                   {"ck_stained", e.id + "_ck_stained.png"},
                   {"mask", e.id + "_mask.png"},
                   {"artifacts", e.id + "_artifacts.json"}};

        bool complete = true;
        for (auto& [role, rel] : e.files)
            complete = complete && fs::exists(fs::path(out_dir) / rel);

        if (!complete) {
            PhantomSpec spec = spec_template;
            spec.seed = e.seed;
            PhantomSample s = generate_phantom(spec);
            auto path = [&](const char* role) {
                return (fs::path(out_dir) / e.files.at(role)).string();
            };
            save_png16(s.dapi, path("dapi"));
            save_png16(s.ck_true, path("ck_true"));
            save_png16(s.ck_stained, path("ck_stained"));
            save_mask8(s.epithelium_mask, path("mask"));
            {
                fs::path ap = fs::path(out_dir) / e.files.at("artifacts");
                fs::path tmp = ap;
                tmp += ".tmp";
                std::ofstream f(tmp);
                f << artifacts_to_json(s.artifacts).dump(2) << "\n";
                f.close();
                fs::rename(tmp, ap);
            }
            e.has_artifacts = !s.artifacts.empty();
        } else {
            std::ifstream f(fs::path(out_dir) / e.files.at("artifacts"));
            json aj;
            f >> aj;
            e.has_artifacts = !aj.empty();
        }
        manifest.entries.push_back(std::move(e));
    }
    manifest.save((fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

PhantomSample load_sample(const std::string& dataset_dir,
                          const DatasetManifest::Entry& entry) {
    auto path = [&](const char* role) {
        return (fs::path(dataset_dir) / entry.files.at(role)).string();
    };
    PhantomSample s;
    s.dapi = load_png16(path("dapi"));
    s.ck_true = load_png16(path("ck_true"));
    s.ck_stained = load_png16(path("ck_stained"));
    s.epithelium_mask = load_mask8(path("mask"));
    std::ifstream f(path("artifacts"));
    if (f) {
        json aj;
        f >> aj;
        for (auto& a : aj) {
            ArtifactKind kind = artifact_kind_from_string(a.at("kind"));
            int cx = a.at("cx"), cy = a.at("cy");
            double radius = a.at("radius");
            DiskRegion reg = artifact_region(kind, cx, cy, radius, s.epithelium_mask);
            s.artifacts.push_back({kind, std::move(reg.mask), cx, cy, radius});
        }
    }
    return s;
}

}  // namespace d2c
