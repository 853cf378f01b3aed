#pragma once

#include "canopy/raster.hpp"

#include <string>
#include <vector>

namespace canopy {

inline constexpr int default_tile_size = 1024;
inline constexpr int default_tile_overlap = 128;

/// Overlapping crop windows covering an image, in row-major (y0, x0) order.
struct TilingPlan {
    int image_width = 0;
    int image_height = 0;
    int tile_size = 0;
    int overlap = 0;
    std::vector<PixelWindow> windows;

    bool operator==(const TilingPlan&) const = default;
};

/// Start offsets along one axis: 0, s, 2s, ... with s = tile_size - overlap
/// while a window still falls short of the extent, then one window clamped to
/// the far edge.
std::vector<int> tile_positions(int extent, int tile_size, int overlap);

/// Throws ConfigError on overlap >= tile_size, tile_size < 1, overlap < 0 or
/// a zero extent.
TilingPlan plan_tiles(int width, int height, int tile_size, int overlap);

/// `{"image_width":..,"image_height":..,"tile_size":..,"overlap":..,"windows":[[x0,y0,w,h],..]}`
std::string plan_to_json(const TilingPlan& plan);
TilingPlan plan_from_json(const std::string& text);

/// Empty when the plan satisfies coverage, window sizing and ordering;
/// otherwise one message per violation.
std::vector<std::string> check_plan(const TilingPlan& plan);

} // namespace canopy
