#pragma once

#include "d2c/raster.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace d2c {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// Rectangular region of interest; whole raster when absent.
struct FOVRegion {
    std::string id;
    int x = 0, y = 0, width = 0, height = 0;
};

struct MetricsReport {
    std::optional<double> f1;
    std::optional<double> precision;
    std::optional<double> sensitivity;
    ConfusionCounts counts;
    std::string roi_id;
    std::string undefined_policy = "flagged_undefined";
    std::string aggregation = "single";  // single | micro_pooled

    nlohmann::json to_json() const;
};

ConfusionCounts confusion(const Raster& pred, const Raster& ref,
                          const FOVRegion* roi = nullptr);

// Confusion restricted to pixels where region_mask is positive.
ConfusionCounts confusion_masked(const Raster& pred, const Raster& ref,
                                 const Raster& region_mask);

MetricsReport metrics(const ConfusionCounts& counts,
                      const std::string& roi_id = "");

struct EvaluationResult {
    std::vector<MetricsReport> per_fov;
    MetricsReport pooled;
};

// Per-FOV reports plus a micro-averaged (summed-count) pooled report.
EvaluationResult evaluate_against_annotations(
    const std::map<std::string, Raster>& pred_masks,
    const std::map<std::string, Raster>& ref_masks);

// Stained-CK segmentation acts as the reference mask.
EvaluationResult compare_synthetic_vs_stained(
    const std::map<std::string, Raster>& seg_on_synthetic,
    const std::map<std::string, Raster>& seg_on_stained);

struct TableRow {
    std::string label;
    MetricsReport report;
};

// Renders rows in F1-score / Precision / Sensitivity column order.
std::string render_table(const std::vector<TableRow>& rows);

}  // namespace d2c
