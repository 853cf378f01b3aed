#include "canopy/prompts.hpp"

#include "canopy/error.hpp"

#include <algorithm>

namespace canopy {

std::vector<PointPrompt> grid_points(int tile_width, int tile_height, int points_per_side) {
    if (tile_width < 1 || tile_height < 1) {
        throw ConfigError("cannot place prompts on an empty tile");
    }
    if (points_per_side < 1) throw ConfigError("points per side must be at least 1");

    const int n = points_per_side;
    std::vector<PointPrompt> out;
    out.reserve(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            out.push_back({(i + 0.5) * tile_width / n, (j + 0.5) * tile_height / n});
        }
    }
    return out;
}

std::vector<BoxPrompt> boxes_from_detections(const std::vector<Detection>& dets,
                                             const PixelWindow& tile, double min_score) {
    std::vector<BoxPrompt> out;
    for (const auto& det : dets) {
        if (det.frame() != Frame::image_px) {
            throw FrameError("box prompts need image-pixel detections, got " +
                             std::string(to_string(det.frame())));
        }
        if (det.score < min_score) continue;
        const BBox& b = det.bbox;
        const double xmin = std::max(b.xmin, static_cast<double>(tile.x0));
        const double ymin = std::max(b.ymin, static_cast<double>(tile.y0));
        const double xmax = std::min(b.xmax, static_cast<double>(tile.x0 + tile.width));
        const double ymax = std::min(b.ymax, static_cast<double>(tile.y0 + tile.height));
        if (xmax <= xmin || ymax <= ymin) continue;
        const double inside = (xmax - xmin) * (ymax - ymin);
        if (inside < 0.5 * b.area()) continue;
        out.push_back(
            {BBox{xmin - tile.x0, ymin - tile.y0, xmax - tile.x0, ymax - tile.y0, Frame::tile_px},
             det.score});
    }
    return out;
}

} // namespace canopy
