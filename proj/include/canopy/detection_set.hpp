#pragma once

#include "canopy/geometry.hpp"
#include "canopy/raster.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace canopy {

/// Detections for one image, all in one frame.
struct DetectionSet {
    std::string image_id;
    Frame frame = Frame::image_px;
    std::optional<std::string> crs_id;
    /// Pixel -> world map of the source image, when known. Lets world-frame
    /// sets be brought back to pixels for evaluation.
    std::optional<AffineGeoTransform> geo_transform;
    std::vector<Detection> detections;
    /// Config snapshot and predictor identity of the run that produced the set.
    nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

    bool operator==(const DetectionSet&) const = default;
};

/// Canonical order: score desc, then bbox (xmin, ymin), then `ranks_before`.
void canonical_sort(std::vector<Detection>& dets);

/// Same detections in the world frame. Throws FrameError if the set has no
/// geo transform or is not in the image-pixel frame.
DetectionSet to_world_frame(const DetectionSet& set);

/// Same detections in the image-pixel frame (identity for pixel-frame sets).
DetectionSet to_pixel_frame(const DetectionSet& set);

} // namespace canopy
