#pragma once

#include "canopy/geometry.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace canopy {

inline constexpr double default_eval_iou = 0.4;
inline constexpr double default_min_score = 0.1;

struct GroundTruthSet {
    std::string image_id;
    std::vector<BBox> boxes;
    std::vector<Polygon> polygons;
};

enum class EvalGeometry {
    bbox,
};

struct EvalConfig {
    double iou_threshold = default_eval_iou;
    double min_score = default_min_score;
    EvalGeometry geometry = EvalGeometry::bbox;
    /// Precision and recall reported for an image with neither ground truth
    /// nor predictions.
    double empty_image_score = 1.0;
};

/// Throws ConfigError when a threshold leaves [0,1].
void validate(const EvalConfig& cfg);

struct MatchPair {
    std::size_t prediction;   ///< index into the input prediction list
    std::size_t ground_truth; ///< index into the ground-truth list
    double iou;
};

struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<MatchPair> pairs;
};

/// Greedy matching. Predictions below `cfg.min_score` are ignored; the rest
/// are visited in `ranks_before` order and each takes the unmatched ground
/// truth box with the highest IOU >= `cfg.iou_threshold` (lowest index on
/// ties).
MatchResult match_detections(const std::vector<Detection>& preds, const std::vector<BBox>& gts,
                             const EvalConfig& cfg);

struct ImageMetrics {
    std::string image_id;
    double precision = 0.0;
    double recall = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct MetricsReport {
    EvalConfig config;
    std::vector<ImageMetrics> per_image; ///< sorted by image_id
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    /// Prediction images with no ground-truth entry; skipped.
    int ignored_images = 0;
};

double precision_of(int tp, int fp, int fn, double empty_score = 1.0);
double recall_of(int tp, int fp, int fn, double empty_score = 1.0);

/// Per-image precision/recall averaged without weights. Ground-truth images
/// missing from `preds_by_image` count as having no predictions.
MetricsReport evaluate(const std::map<std::string, std::vector<Detection>>& preds_by_image,
                       const std::map<std::string, GroundTruthSet>& gts_by_image,
                       const EvalConfig& cfg);

std::string format_report_json(const MetricsReport& report);
std::string format_report_table(const MetricsReport& report);

/// Ground truth from a box CSV (`image_id,xmin,ymin,xmax,ymax`) or a
/// detections GeoJSON file (by extension).
std::map<std::string, GroundTruthSet> read_ground_truth(const std::filesystem::path& path);

} // namespace canopy
