#include "d2c/metrics.hpp"

#include <iomanip>
#include <sstream>

namespace d2c {

using nlohmann::json;

ConfusionCounts confusion(const Raster& pred, const Raster& ref,
                          const FOVRegion* roi) {
    if (!pred.same_shape(ref))
        throw ValidationError("confusion: mask dimensions differ (" +
                              std::to_string(pred.width) + "x" +
                              std::to_string(pred.height) + " vs " +
                              std::to_string(ref.width) + "x" +
                              std::to_string(ref.height) + ")");
    int x0 = 0, y0 = 0, x1 = pred.width, y1 = pred.height;
    if (roi) {
        if (roi->x < 0 || roi->y < 0 || roi->x + roi->width > pred.width ||
            roi->y + roi->height > pred.height)
            throw ValidationError("confusion: ROI outside raster bounds");
        x0 = roi->x;
        y0 = roi->y;
        x1 = roi->x + roi->width;
        y1 = roi->y + roi->height;
    }
    ConfusionCounts c;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            bool p = pred.at(x, y) > 0.5f;
            bool r = ref.at(x, y) > 0.5f;
            if (p && r)
                ++c.tp;
            else if (p && !r)
                ++c.fp;
            else if (!p && r)
                ++c.fn;
            else
                ++c.tn;
        }
    return c;
}

ConfusionCounts confusion_masked(const Raster& pred, const Raster& ref,
                                 const Raster& region_mask) {
    if (!pred.same_shape(ref) || !pred.same_shape(region_mask))
        throw ValidationError("confusion_masked: dimensions differ");
    ConfusionCounts c;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (region_mask.at(x, y) <= 0.5f) continue;
            bool p = pred.at(x, y) > 0.5f;
            bool r = ref.at(x, y) > 0.5f;
            if (p && r)
                ++c.tp;
            else if (p && !r)
                ++c.fp;
            else if (!p && r)
                ++c.fn;
            else
                ++c.tn;
        }
    return c;
}

MetricsReport metrics(const ConfusionCounts& counts, const std::string& roi_id) {
    MetricsReport r;
    r.counts = counts;
    r.roi_id = roi_id;
    if (counts.tp + counts.fp > 0)
        r.precision = double(counts.tp) / double(counts.tp + counts.fp);
    if (counts.tp + counts.fn > 0)
        r.sensitivity = double(counts.tp) / double(counts.tp + counts.fn);
    if (2 * counts.tp + counts.fp + counts.fn > 0)
        r.f1 = 2.0 * double(counts.tp) /
               double(2 * counts.tp + counts.fp + counts.fn);
    return r;
}

json MetricsReport::to_json() const {
    json j;
    auto put = [&](const char* k, const std::optional<double>& v) {
        if (v)
            j[k] = *v;
        else
            j[k] = nullptr;
    };
    put("f1", f1);
    put("precision", precision);
    put("sensitivity", sensitivity);
    j["undefined"] = json::array();
    if (!f1) j["undefined"].push_back("f1");
    if (!precision) j["undefined"].push_back("precision");
    if (!sensitivity) j["undefined"].push_back("sensitivity");
    j["counts"] = {{"tp", counts.tp}, {"fp", counts.fp},
                   {"fn", counts.fn}, {"tn", counts.tn}};
    j["roi_id"] = roi_id;
    j["undefined_policy"] = undefined_policy;
    j["aggregation"] = aggregation;
    return j;
}

namespace {

EvaluationResult paired_evaluation(const std::map<std::string, Raster>& pred,
                                   const std::map<std::string, Raster>& ref) {
    std::vector<std::string> missing;
    for (auto& [id, m] : pred)
        if (!ref.count(id)) missing.push_back(id + " (no reference)");
    for (auto& [id, m] : ref)
        if (!pred.count(id)) missing.push_back(id + " (no prediction)");
    if (!missing.empty()) {
        std::string msg = "FOV identifier mismatch:";
        for (auto& m : missing) msg += " " + m;
        throw ValidationError(msg);
    }
    if (pred.empty()) throw ValidationError("no FOVs to evaluate");

    EvaluationResult res;
    ConfusionCounts pooled;
    for (auto& [id, pm] : pred) {
        auto c = confusion(pm, ref.at(id));
        res.per_fov.push_back(metrics(c, id));
        pooled += c;
    }
    res.pooled = metrics(pooled, "pooled");
    res.pooled.aggregation = "micro_pooled";
    return res;
}

}  // namespace

EvaluationResult evaluate_against_annotations(
    const std::map<std::string, Raster>& pred_masks,
    const std::map<std::string, Raster>& ref_masks) {
    return paired_evaluation(pred_masks, ref_masks);
}

EvaluationResult compare_synthetic_vs_stained(
    const std::map<std::string, Raster>& seg_on_synthetic,
    const std::map<std::string, Raster>& seg_on_stained) {
    return paired_evaluation(seg_on_synthetic, seg_on_stained);
}

std::string render_table(const std::vector<TableRow>& rows) {
    std::ostringstream os;
    size_t lw = 4;
    for (auto& r : rows) lw = std::max(lw, r.label.size());
    os << std::left << std::setw(int(lw)) << "Test"
       << "  F1-score  Precision  Sensitivity\n";
    auto cell = [&](const std::optional<double>& v) {
        std::ostringstream c;
        if (v)
            c << std::fixed << std::setprecision(2) << *v;
        else
            c << "undef";
        return c.str();
    };
    for (auto& r : rows) {
        os << std::left << std::setw(int(lw)) << r.label << "  "
           << std::setw(8) << cell(r.report.f1) << "  "
           << std::setw(9) << cell(r.report.precision) << "  "
           << std::setw(11) << cell(r.report.sensitivity) << "\n";
    }
    return os.str();
}

}  // namespace d2c
