#include "canopy/tiling.hpp"

#include "canopy/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <tuple>

namespace canopy {

std::vector<int> tile_positions(int extent, int tile_size, int overlap) {
    if (extent <= tile_size) return {0};
    const int stride = tile_size - overlap;
    std::vector<int> out;
    for (int pos = 0; pos + tile_size < extent; pos += stride) out.push_back(pos);
    if (out.back() + tile_size < extent) out.push_back(extent - tile_size);
    return out;
}

TilingPlan plan_tiles(int width, int height, int tile_size, int overlap) {
    if (width < 1 || height < 1) {
        throw ConfigError("cannot tile an empty image (" + std::to_string(width) + "x" +
                          std::to_string(height) + ")");
    }
    if (tile_size < 1) throw ConfigError("tile size must be at least 1");
    if (overlap < 0 || overlap >= tile_size) {
        throw ConfigError("overlap " + std::to_string(overlap) + " must lie in [0, tile size " +
                          std::to_string(tile_size) + ")");
    }

    TilingPlan plan{width, height, tile_size, overlap, {}};
    const auto xs = tile_positions(width, tile_size, overlap);
    const auto ys = tile_positions(height, tile_size, overlap);
    const int w = std::min(tile_size, width);
    const int h = std::min(tile_size, height);
    plan.windows.reserve(xs.size() * ys.size());
    for (int y : ys) {
        for (int x : xs) plan.windows.push_back({x, y, w, h});
    }
    return plan;
}

std::string plan_to_json(const TilingPlan& plan) {
    nlohmann::ordered_json j;
    j["image_width"] = plan.image_width;
    j["image_height"] = plan.image_height;
    j["tile_size"] = plan.tile_size;
    j["overlap"] = plan.overlap;
    auto windows = nlohmann::ordered_json::array();
    for (const auto& w : plan.windows) windows.push_back({w.x0, w.y0, w.width, w.height});
    j["windows"] = std::move(windows);
    return j.dump();
}

TilingPlan plan_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TilingPlan plan;
        plan.image_width = j.at("image_width").get<int>();
        plan.image_height = j.at("image_height").get<int>();
        plan.tile_size = j.at("tile_size").get<int>();
        plan.overlap = j.at("overlap").get<int>();
        for (const auto& w : j.at("windows")) {
            if (w.size() != 4) throw ParseError("tiling plan window must have 4 entries");
            plan.windows.push_back(
                {w[0].get<int>(), w[1].get<int>(), w[2].get<int>(), w[3].get<int>()});
        }
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed tiling plan: ") + e.what());
    }
}

std::vector<std::string> check_plan(const TilingPlan& plan) {
    std::vector<std::string> problems;
    if (plan.image_width < 1 || plan.image_height < 1) {
        problems.push_back("empty image extent");
        return problems;
    }
    const int want_w = std::min(plan.tile_size, plan.image_width);
    const int want_h = std::min(plan.tile_size, plan.image_height);

    // Coverage is checked per axis: windows form a grid, so every pixel is
    // covered iff the distinct x spans and y spans each cover their axis.
    std::vector<std::pair<int, int>> xspans, yspans;
    for (std::size_t i = 0; i < plan.windows.size(); ++i) {
        const auto& w = plan.windows[i];
        if (w.width != want_w || w.height != want_h) {
            problems.push_back("window " + std::to_string(i) + " has size " +
                               std::to_string(w.width) + "x" + std::to_string(w.height));
        }
        if (w.x0 < 0 || w.y0 < 0 || w.x0 + w.width > plan.image_width ||
            w.y0 + w.height > plan.image_height) {
            problems.push_back("window " + std::to_string(i) + " leaves the image");
        }
        if (i > 0) {
            const auto& p = plan.windows[i - 1];
            if (std::tie(p.y0, p.x0) >= std::tie(w.y0, w.x0)) {
                problems.push_back("window " + std::to_string(i) + " out of row-major order");
            }
        }
        xspans.emplace_back(w.x0, w.x0 + w.width);
        yspans.emplace_back(w.y0, w.y0 + w.height);
    }

    auto covered = [](std::vector<std::pair<int, int>> spans, int extent) {
        std::sort(spans.begin(), spans.end());
        int reach = 0;
        for (const auto& [lo, hi] : spans) {
            if (lo > reach) return false;
            reach = std::max(reach, hi);
        }
        return reach >= extent;
    };
    if (plan.windows.empty() || !covered(xspans, plan.image_width) ||
        !covered(yspans, plan.image_height)) {
        problems.push_back("windows do not cover the image");
    } else {
        // Grid check: every (x, y) combination present.
        std::vector<int> xs, ys;
        for (const auto& w : plan.windows) {
            xs.push_back(w.x0);
            ys.push_back(w.y0);
        }
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        std::sort(ys.begin(), ys.end());
        ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
        if (xs.size() * ys.size() != plan.windows.size()) {
            problems.push_back("windows do not form a complete grid");
        }
    }
    return problems;
}

} // namespace canopy
