#pragma once

#include "canopy/geometry.hpp"
#include "canopy/raster.hpp"

#include <optional>
#include <vector>

namespace canopy {

inline constexpr int default_points_per_side = 32;

/// Tile-local point prompt, 0 <= x < width and 0 <= y < height.
struct PointPrompt {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const PointPrompt&) const = default;
};

/// Tile-local box prompt, clamped to the tile.
struct BoxPrompt {
    BBox bbox;
    std::optional<double> source_score;

    bool operator==(const BoxPrompt&) const = default;
};

struct PromptSet {
    int tile_index = 0;
    std::vector<PointPrompt> points;
    std::vector<BoxPrompt> boxes;

    bool empty() const { return points.empty() && boxes.empty(); }
    bool operator==(const PromptSet&) const = default;
};

/// Centres of an n x n subdivision of the tile, row-major:
/// x_i = (i + 0.5) * w / n, y_j = (j + 0.5) * h / n.
std::vector<PointPrompt> grid_points(int tile_width, int tile_height, int points_per_side);

/// Detector boxes (image-pixel frame) that belong to `tile`, converted to
/// tile-local coordinates and clamped. A box is kept only when its score is at
/// least `min_score` and at least half of its area lies inside the tile.
std::vector<BoxPrompt> boxes_from_detections(const std::vector<Detection>& dets,
                                             const PixelWindow& tile, double min_score);

} // namespace canopy
