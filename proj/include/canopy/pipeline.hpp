#pragma once

#include "canopy/detection_set.hpp"
#include "canopy/eval.hpp"
#include "canopy/geometry.hpp"
#include "canopy/predictor.hpp"
#include "canopy/prompts.hpp"
#include "canopy/raster.hpp"
#include "canopy/tiling.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace canopy {

inline constexpr double default_nms_iou = 0.05;

enum class PromptMode {
    automatic_grid,
    bbox_prompted,
};

std::string_view to_string(PromptMode mode);
PromptMode prompt_mode_from_string(std::string_view text);

struct PipelineConfig {
    int tile_size = default_tile_size;
    int overlap = default_tile_overlap;
    int points_per_side = default_points_per_side;
    PromptMode prompt_mode = PromptMode::automatic_grid;
    std::optional<std::string> prompt_detections_path;
    double prompt_min_score = default_min_score;
    double nms_iou = default_nms_iou;
    NmsMode nms_mode = NmsMode::polygon;
    double min_score = default_min_score;
    double min_area_px = 0.0;
    std::string predictor_command;
    std::chrono::milliseconds predictor_timeout = default_predictor_timeout;
    std::map<std::string, std::string> predictor_params;
    int worker_count = 1;
    /// Where tile PNGs for external predictors go; a temporary directory is
    /// created (and removed) when unset.
    std::optional<std::filesystem::path> work_dir;
};

/// Throws ConfigError on any out-of-range field.
void validate(const PipelineConfig& config);

/// Effective configuration echoed into provenance and run manifests.
nlohmann::ordered_json config_to_json(const PipelineConfig& config);

using PredictorFactory = std::function<std::unique_ptr<Predictor>()>;

struct TileStatus {
    int tile_index = 0;
    PixelWindow window;
    std::string status = "pending"; ///< pending | ok | skipped | failed
    int segments = 0;
    int detections = 0;
    std::string message;
};

struct RunOptions {
    std::string image_id = "image";
    /// Used when unset: `make_predictor(config.predictor_command, ...)`.
    PredictorFactory predictor_factory;
    /// Box prompts (image-pixel frame) for bbox-prompted runs; read from
    /// `config.prompt_detections_path` when empty.
    std::optional<std::vector<Detection>> prompt_detections;
    /// Dispatch order of tile indices; defaults to plan order.
    std::vector<int> tile_order;
    /// Filled with per-tile outcomes, including on failure.
    std::vector<TileStatus>* tile_status = nullptr;
};

/// Tile -> prompt -> predict -> largest component -> polygon -> image frame
/// -> score filter -> one global NMS. The result is in the image-pixel frame,
/// canonically sorted, and carries the raster's geo transform and CRS.
/// Predictor failures abort the run with the tile in the message.
DetectionSet run(const RasterImage& raster, const PipelineConfig& config,
                 const RunOptions& options = {});

/// Moves tile-local detections into the image frame by their tile's origin.
/// No suppression happens here. Throws PlumbingError on an unknown tile.
std::vector<Detection>
merge_tiles(const std::vector<std::pair<int, std::vector<Detection>>>& per_tile,
            const TilingPlan& plan);

/// Loads bbox prompts from a detections GeoJSON or a box CSV. CSV rows for
/// other images than `image_id` are ignored unless the file names only one
/// image.
std::vector<Detection> load_prompt_detections(const std::filesystem::path& path,
                                              const std::string& image_id);

} // namespace canopy
