#include "canopy/pipeline.hpp"

#include "canopy/detections_io.hpp"
#include "canopy/error.hpp"

#include <unistd.h>

#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace canopy {

std::string_view to_string(PromptMode mode) {
    return mode == PromptMode::automatic_grid ? "automatic-grid" : "bbox-prompted";
}

PromptMode prompt_mode_from_string(std::string_view text) {
    if (text == "automatic-grid" || text == "automatic") return PromptMode::automatic_grid;
    if (text == "bbox-prompted" || text == "bbox") return PromptMode::bbox_prompted;
    throw ConfigError("unknown prompt mode '" + std::string(text) +
                      "' (expected automatic-grid|bbox-prompted)");
}

void validate(const PipelineConfig& c) {
    if (c.tile_size < 1) throw ConfigError("tile size must be at least 1");
    if (c.overlap < 0 || c.overlap >= c.tile_size) {
        throw ConfigError("overlap " + std::to_string(c.overlap) + " must lie in [0, tile size " +
                          std::to_string(c.tile_size) + ")");
    }
    if (c.points_per_side < 1) throw ConfigError("points per side must be at least 1");
    if (!(c.nms_iou >= 0.0 && c.nms_iou <= 1.0)) throw ConfigError("nms_iou must be in [0,1]");
    if (!(c.min_score >= 0.0 && c.min_score <= 1.0)) {
        throw ConfigError("min_score must be in [0,1]");
    }
    if (!(c.prompt_min_score >= 0.0 && c.prompt_min_score <= 1.0)) {
        throw ConfigError("prompt_min_score must be in [0,1]");
    }
    if (!(c.min_area_px >= 0.0)) throw ConfigError("min_area_px must be non-negative");
    if (c.worker_count < 1) throw ConfigError("worker count must be at least 1");
    if (c.predictor_timeout.count() <= 0) throw ConfigError("predictor timeout must be positive");
    if (c.predictor_command.empty()) throw ConfigError("no predictor configured");
}

nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["tile_size"] = c.tile_size;
    j["overlap"] = c.overlap;
    j["points_per_side"] = c.points_per_side;
    j["prompt_mode"] = std::string(to_string(c.prompt_mode));
    j["prompt_detections_path"] = c.prompt_detections_path
                                      ? nlohmann::ordered_json(*c.prompt_detections_path)
                                      : nlohmann::ordered_json(nullptr);
    j["prompt_min_score"] = c.prompt_min_score;
    j["nms_iou"] = c.nms_iou;
    j["nms_mode"] = std::string(to_string(c.nms_mode));
    j["min_score"] = c.min_score;
    j["min_area_px"] = c.min_area_px;
    j["predictor_command"] = c.predictor_command;
    j["predictor_timeout_s"] = static_cast<double>(c.predictor_timeout.count()) / 1000.0;
    j["predictor_params"] = c.predictor_params;
    j["worker_count"] = c.worker_count;
    return j;
}

std::vector<Detection>
merge_tiles(const std::vector<std::pair<int, std::vector<Detection>>>& per_tile,
            const TilingPlan& plan) {
    std::vector<Detection> out;
    for (const auto& [index, dets] : per_tile) {
        if (index < 0 || index >= static_cast<int>(plan.windows.size())) {
            throw PlumbingError("unknown tile index " + std::to_string(index));
        }
        const auto& w = plan.windows[static_cast<std::size_t>(index)];
        for (const auto& d : dets) {
            if (d.frame() != Frame::tile_px) {
                throw FrameError("merge_tiles expects tile-local detections");
            }
            Detection moved = d;
            moved.polygon = translate(d.polygon, w.x0, w.y0, Frame::image_px);
            moved.bbox = polygon_bbox(moved.polygon);
            moved.tile_index = index;
            out.push_back(std::move(moved));
        }
    }
    return out;
}

std::vector<Detection> load_prompt_detections(const std::filesystem::path& path,
                                              const std::string& image_id) {
    if (path.extension() == ".csv") {
        const auto by_image = read_box_csv(path);
        if (const auto it = by_image.find(image_id); it != by_image.end()) return it->second;
        if (by_image.size() == 1) return by_image.begin()->second;
        return {};
    }
    return to_pixel_frame(read_detections(path)).detections;
}

namespace {

class WorkDir {
  public:
    explicit WorkDir(const std::optional<std::filesystem::path>& requested) {
        if (requested) {
            path_ = *requested;
            std::filesystem::create_directories(path_);
            return;
        }
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("canopy-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
        owned_ = true;
    }
    ~WorkDir() {
        if (owned_) {
            std::error_code ec;
            std::filesystem::remove_all(path_, ec);
        }
    }
    WorkDir(const WorkDir&) = delete;
    WorkDir& operator=(const WorkDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    bool owned_ = false;
};

struct TileOutcome {
    std::vector<Detection> detections;
    std::exception_ptr error;
};

std::string window_text(const PixelWindow& w) {
    return "(" + std::to_string(w.x0) + "," + std::to_string(w.y0) + "," + std::to_string(w.width) +
           "," + std::to_string(w.height) + ")";
}

} // namespace

DetectionSet run(const RasterImage& raster, const PipelineConfig& config,
                 const RunOptions& options) {
    validate(config);
    const TilingPlan plan =
        plan_tiles(raster.width(), raster.height(), config.tile_size, config.overlap);
    const auto tile_count = static_cast<int>(plan.windows.size());

    std::vector<int> order = options.tile_order;
    if (order.empty()) {
        order.resize(static_cast<std::size_t>(tile_count));
        std::iota(order.begin(), order.end(), 0);
    } else {
        auto sorted = order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> expected(static_cast<std::size_t>(tile_count));
        std::iota(expected.begin(), expected.end(), 0);
        if (sorted != expected) throw ConfigError("tile order is not a permutation of the plan");
    }

    std::vector<Detection> prompt_dets;
    if (config.prompt_mode == PromptMode::bbox_prompted) {
        if (options.prompt_detections) {
            prompt_dets = *options.prompt_detections;
        } else if (config.prompt_detections_path) {
            prompt_dets = load_prompt_detections(*config.prompt_detections_path, options.image_id);
        } else {
            throw ConfigError("bbox-prompted mode requires prompt detections");
        }
    }

    const PredictorFactory factory =
        options.predictor_factory ? options.predictor_factory : PredictorFactory([&config] {
            return make_predictor(config.predictor_command, config.predictor_timeout);
        });
    const DetectionSource source = config.prompt_mode == PromptMode::automatic_grid
                                       ? DetectionSource::automatic_grid
                                       : DetectionSource::bbox_prompted;

    std::vector<TileStatus> status(static_cast<std::size_t>(tile_count));
    for (int i = 0; i < tile_count; ++i) {
        status[static_cast<std::size_t>(i)].tile_index = i;
        status[static_cast<std::size_t>(i)].window = plan.windows[static_cast<std::size_t>(i)];
    }
    std::vector<TileOutcome> outcomes(static_cast<std::size_t>(tile_count));
    std::optional<WorkDir> work;
    std::string identity;
    std::mutex identity_mutex;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};

    auto process_tile = [&](Predictor& predictor, int index) {
        auto& st = status[static_cast<std::size_t>(index)];
        const PixelWindow& window = plan.windows[static_cast<std::size_t>(index)];
        const RasterImage tile = read_window(raster, window);

        PredictorRequest request;
        request.request_id = options.image_id + "/tile-" + std::to_string(index);
        request.prompts.tile_index = index;
        request.params = config.predictor_params;
        if (config.prompt_mode == PromptMode::automatic_grid) {
            request.prompts.points =
                grid_points(tile.width(), tile.height(), config.points_per_side);
        } else {
            request.prompts.boxes =
                boxes_from_detections(prompt_dets, window, config.prompt_min_score);
            if (request.prompts.boxes.empty()) {
                st.status = "skipped";
                return;
            }
        }
        if (predictor.needs_image_file()) {
            const auto file = work->path() / ("tile-" + std::to_string(index) + ".png");
            write_png(tile, file);
            request.image_path = file.string();
        } else {
            request.image_path = "memory://" + request.request_id;
        }

        const auto response = segment(predictor, request, tile);
        st.segments = static_cast<int>(response.segments.size());
        auto& dets = outcomes[static_cast<std::size_t>(index)].detections;
        for (const auto& seg : response.segments) {
            const BinaryMask mask = largest_component(rle_decode(seg.rle));
            const auto area = mask.count();
            if (area == 0 || static_cast<double>(area) < config.min_area_px) continue;
            Detection d =
                make_detection(mask_to_polygon(mask, Frame::tile_px), seg.score, source, index);
            d.prompt_index = seg.prompt_index;
            dets.push_back(std::move(d));
        }
        st.detections = static_cast<int>(dets.size());
        st.status = "ok";
    };

    auto worker = [&] {
        std::unique_ptr<Predictor> predictor;
        while (!abort.load()) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= order.size()) break;
            const int index = order[slot];
            try {
                if (!predictor) {
                    predictor = factory();
                    std::lock_guard lock(identity_mutex);
                    if (identity.empty()) identity = predictor->identity();
                }
                process_tile(*predictor, index);
            } catch (...) {
                auto& st = status[static_cast<std::size_t>(index)];
                st.status = "failed";
                try {
                    throw;
                } catch (const std::exception& e) {
                    st.message = e.what();
                }
                outcomes[static_cast<std::size_t>(index)].error = std::current_exception();
                abort.store(true);
            }
        }
    };

    {
        // Probe once so the work directory exists before workers write tiles.
        auto probe = factory();
        identity = probe->identity();
        if (probe->needs_image_file()) work.emplace(config.work_dir);
    }

    const int workers = std::min(config.worker_count, std::max(tile_count, 1));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(workers));
        for (int i = 0; i < workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    if (options.tile_status) *options.tile_status = status;

    for (int i = 0; i < tile_count; ++i) {
        const auto& outcome = outcomes[static_cast<std::size_t>(i)];
        if (!outcome.error) continue;
        const std::string where = "tile " + std::to_string(i) + " " +
                                  window_text(plan.windows[static_cast<std::size_t>(i)]);
        try {
            std::rethrow_exception(outcome.error);
        } catch (const Error& e) {
            const std::string msg = where + ": " + e.what();
            switch (e.kind()) {
            case ErrorKind::predictor: throw PredictorError(msg);
            case ErrorKind::config: throw ConfigError(msg);
            case ErrorKind::io: throw IoError(msg);
            case ErrorKind::internal: throw Error(ErrorKind::internal, msg);
            }
            throw;
        } catch (const std::exception& e) {
            throw Error(ErrorKind::internal, where + ": " + e.what());
        }
    }

    std::vector<std::pair<int, std::vector<Detection>>> per_tile;
    for (int i = 0; i < tile_count; ++i) {
        per_tile.emplace_back(i, std::move(outcomes[static_cast<std::size_t>(i)].detections));
    }
    std::vector<Detection> merged = merge_tiles(per_tile, plan);
    std::erase_if(merged, [&](const Detection& d) { return d.score < config.min_score; });
    auto kept = nms(std::move(merged), config.nms_iou, config.nms_mode);
    canonical_sort(kept);

    DetectionSet set;
    set.image_id = options.image_id;
    set.frame = Frame::image_px;
    if (raster.geo()) {
        set.geo_transform = raster.geo()->transform;
        if (!raster.geo()->crs_id.empty()) set.crs_id = raster.geo()->crs_id;
    }
    set.detections = std::move(kept);
    set.provenance["generator"] = "canopy";
    set.provenance["predictor"] = identity;
    set.provenance["config"] = config_to_json(config);
    return set;
}

} // namespace canopy
