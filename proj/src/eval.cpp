#include "canopy/eval.hpp"

#include "canopy/detections_io.hpp"
#include "canopy/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace canopy {

void validate(const EvalConfig& cfg) {
    if (!(cfg.iou_threshold >= 0.0 && cfg.iou_threshold <= 1.0)) {
        throw ConfigError("eval IOU threshold must be in [0,1]");
    }
    if (!(cfg.min_score >= 0.0 && cfg.min_score <= 1.0)) {
        throw ConfigError("eval min score must be in [0,1]");
    }
}

double precision_of(int tp, int fp, int fn, double empty_score) {
    if (tp + fp == 0) {
        if (fn != 0) return 0.0;
        return empty_score;
    }
    return static_cast<double>(tp) / (tp + fp);
}

double recall_of(int tp, int fp, int fn, double empty_score) {
    if (tp + fn == 0) {
        if (fp != 0) return 0.0;
        return empty_score;
    }
    return static_cast<double>(tp) / (tp + fn);
}

MatchResult match_detections(const std::vector<Detection>& preds, const std::vector<BBox>& gts,
                             const EvalConfig& cfg) {
    validate(cfg);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].score >= cfg.min_score) order.push_back(i);
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ranks_before(preds[a], preds[b]); });

    MatchResult out;
    std::vector<bool> taken(gts.size(), false);
    for (const std::size_t p : order) {
        std::optional<std::size_t> best;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double iou = bbox_iou(preds[p].bbox, gts[g]);
            if (iou >= cfg.iou_threshold && iou > best_iou) {
                best = g;
                best_iou = iou;
            }
        }
        if (best) {
            taken[*best] = true;
            ++out.tp;
            out.pairs.push_back({p, *best, best_iou});
        } else {
            ++out.fp;
        }
    }
    out.fn = static_cast<int>(std::count(taken.begin(), taken.end(), false));
    return out;
}

MetricsReport evaluate(const std::map<std::string, std::vector<Detection>>& preds_by_image,
                       const std::map<std::string, GroundTruthSet>& gts_by_image,
                       const EvalConfig& cfg) {
    validate(cfg);
    MetricsReport report;
    report.config = cfg;
    static const std::vector<Detection> none;
    for (const auto& [id, gt] : gts_by_image) {
        const auto it = preds_by_image.find(id);
        const auto& preds = it == preds_by_image.end() ? none : it->second;
        const auto m = match_detections(preds, gt.boxes, cfg);
        report.per_image.push_back({id, precision_of(m.tp, m.fp, m.fn, cfg.empty_image_score),
                                    recall_of(m.tp, m.fp, m.fn, cfg.empty_image_score), m.tp, m.fp,
                                    m.fn});
    }
    for (const auto& [id, preds] : preds_by_image) {
        if (!gts_by_image.count(id)) ++report.ignored_images;
    }
    if (!report.per_image.empty()) {
        double p = 0.0, r = 0.0;
        for (const auto& m : report.per_image) {
            p += m.precision;
            r += m.recall;
        }
        const auto n = static_cast<double>(report.per_image.size());
        report.macro_precision = p / n;
        report.macro_recall = r / n;
    }
    return report;
}

namespace {

std::string g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

std::string format_report_json(const MetricsReport& report) {
    std::string out = "{\n";
    out += "  \"config\": {\"iou_threshold\": " + g9(report.config.iou_threshold) +
           ", \"min_score\": " + g9(report.config.min_score) + ", \"geometry\": \"bbox\"},\n";
    out += "  \"per_image\": [";
    for (std::size_t i = 0; i < report.per_image.size(); ++i) {
        const auto& m = report.per_image[i];
        out += i == 0 ? "\n" : ",\n";
        out += "    {\"image_id\": " + nlohmann::json(m.image_id).dump() +
               ", \"precision\": " + g9(m.precision) + ", \"recall\": " + g9(m.recall) +
               ", \"tp\": " + std::to_string(m.tp) + ", \"fp\": " + std::to_string(m.fp) +
               ", \"fn\": " + std::to_string(m.fn) + "}";
    }
    out += report.per_image.empty() ? "],\n" : "\n  ],\n";
    out += "  \"macro\": {\"precision\": " + g9(report.macro_precision) +
           ", \"recall\": " + g9(report.macro_recall) +
           ", \"images\": " + std::to_string(report.per_image.size()) + "},\n";
    out += "  \"ignored_images\": " + std::to_string(report.ignored_images) + "\n";
    out += "}\n";
    return out;
}

std::string format_report_table(const MetricsReport& report) {
    std::size_t id_width = 8;
    for (const auto& m : report.per_image) id_width = std::max(id_width, m.image_id.size());
    const std::string macro_label = "macro (" + std::to_string(report.per_image.size()) + ")";
    id_width = std::max(id_width, macro_label.size());

    char buf[512];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %6s  %6s  %6s\n", static_cast<int>(id_width),
                  "image_id", "precision", "recall", "tp", "fp", "fn");
    out += buf;
    out += std::string(id_width + 2 + 9 + 2 + 9 + 3 * 8, '-') + "\n";
    for (const auto& m : report.per_image) {
        std::snprintf(buf, sizeof buf, "%-*s  %9.4f  %9.4f  %6d  %6d  %6d\n",
                      static_cast<int>(id_width), m.image_id.c_str(), m.precision, m.recall, m.tp,
                      m.fp, m.fn);
        out += buf;
    }
    out += std::string(id_width + 2 + 9 + 2 + 9 + 3 * 8, '-') + "\n";
    std::snprintf(buf, sizeof buf, "%-*s  %9.4f  %9.4f\n", static_cast<int>(id_width),
                  macro_label.c_str(), report.macro_precision, report.macro_recall);
    out += buf;
    std::snprintf(buf, sizeof buf, "IoU >= %g, score >= %g\n", report.config.iou_threshold,
                  report.config.min_score);
    out += buf;
    return out;
}

std::map<std::string, GroundTruthSet> read_ground_truth(const std::filesystem::path& path) {
    std::map<std::string, GroundTruthSet> out;
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        for (const auto& [id, dets] : read_box_csv(path)) {
            auto& gt = out[id];
            gt.image_id = id;
            for (const auto& d : dets) gt.boxes.push_back(d.bbox);
        }
        return out;
    }
    const auto set = to_pixel_frame(read_detections(path));
    if (set.image_id.empty()) throw ParseError(path.string() + ": ground truth needs an image_id");
    auto& gt = out[set.image_id];
    gt.image_id = set.image_id;
    for (const auto& d : set.detections) {
        gt.boxes.push_back(d.bbox);
        gt.polygons.push_back(d.polygon);
    }
    return out;
}

} // namespace canopy
