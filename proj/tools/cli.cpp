#include "cli.hpp"

#include "canopy/detection_set.hpp"
#include "canopy/detections_io.hpp"
#include "canopy/error.hpp"
#include "canopy/eval.hpp"
#include "canopy/pipeline.hpp"
#include "canopy/raster.hpp"
#include "canopy/tiling.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <set>

namespace canopy::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Settings {
    PipelineConfig pipeline;
    EvalConfig eval;
    bool prompt_mode_set = false;

    // [detect]
    std::optional<fs::path> detect_image;
    std::optional<fs::path> detect_out;
    std::optional<fs::path> detect_manifest;
    std::string image_id;
    std::string frame = "auto";

    // [eval]
    std::vector<fs::path> eval_pred;
    std::vector<fs::path> eval_gt;
    std::optional<fs::path> eval_out;

    // [tile]
    std::optional<fs::path> tile_image;
    std::optional<fs::path> tile_out_dir;

    // [convert]
    std::vector<fs::path> convert_in;
    std::optional<fs::path> convert_out;
    std::string convert_image_id;
};

std::chrono::milliseconds seconds_to_ms(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("predictor timeout must be positive");
    return std::chrono::milliseconds(std::max<long long>(1, std::llround(s * 1000.0)));
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

class ConfigReader {
  public:
    ConfigReader(fs::path path, Settings& s) : path_(std::move(path)), s_(s) {}

    void load() {
        if (!fs::exists(path_)) throw IoError("config file not found: " + path_.string());
        toml::table root;
        try {
            root = toml::parse_file(path_.string());
        } catch (const toml::parse_error& e) {
            throw ConfigError(path_.string() + ":" + std::to_string(e.source().begin.line) + ": " +
                              std::string(e.description()));
        }
        for (auto&& [key, node] : root) {
            const std::string section(key.str());
            const auto* table = node.as_table();
            if (!table) fail(node, section, "expected a table");
            static const std::set<std::string> known{"pipeline", "predictor", "eval",
                                                     "detect",   "tile",      "convert"};
            if (!known.count(section)) fail(node, section, "unknown section");
            for (auto&& [k, v] : *table) apply(section, std::string(k.str()), v);
        }
    }

  private:
    [[noreturn]] void fail(const toml::node& n, const std::string& key, const std::string& what) {
        throw ConfigError(path_.string() + ":" + std::to_string(n.source().begin.line) + ": " +
                          key + ": " + what);
    }

    int as_int(const toml::node& n, const std::string& key) {
        if (!n.is_integer()) fail(n, key, "expected an integer");
        return static_cast<int>(*n.value<std::int64_t>());
    }

    double as_double(const toml::node& n, const std::string& key) {
        if (!n.is_number()) fail(n, key, "expected a number");
        return *n.value<double>();
    }

    std::string as_string(const toml::node& n, const std::string& key) {
        if (!n.is_string()) fail(n, key, "expected a string");
        return *n.value<std::string>();
    }

    // Relative paths are taken relative to the config file.
    fs::path as_path(const toml::node& n, const std::string& key) {
        fs::path p = as_string(n, key);
        if (p.is_relative()) p = path_.parent_path() / p;
        return p;
    }

    std::vector<fs::path> as_paths(const toml::node& n, const std::string& key) {
        if (n.is_string()) return {as_path(n, key)};
        const auto* arr = n.as_array();
        if (!arr) fail(n, key, "expected a string or an array of strings");
        std::vector<fs::path> out;
        for (const auto& item : *arr) out.push_back(as_path(item, key));
        return out;
    }

    void apply(const std::string& section, const std::string& k, const toml::node& v) {
        const std::string key = section + "." + k;
        auto& p = s_.pipeline;
        if (section == "pipeline") {
            if (k == "tile_size")
                p.tile_size = as_int(v, key);
            else if (k == "overlap")
                p.overlap = as_int(v, key);
            else if (k == "points_per_side")
                p.points_per_side = as_int(v, key);
            else if (k == "prompt_mode") {
                p.prompt_mode = prompt_mode_from_string(as_string(v, key));
                s_.prompt_mode_set = true;
            } else if (k == "prompt_detections_path")
                p.prompt_detections_path = as_path(v, key).string();
            else if (k == "prompt_min_score")
                p.prompt_min_score = as_double(v, key);
            else if (k == "nms_iou")
                p.nms_iou = as_double(v, key);
            else if (k == "nms_mode")
                p.nms_mode = nms_mode_from_string(as_string(v, key));
            else if (k == "min_score")
                p.min_score = as_double(v, key);
            else if (k == "min_area_px")
                p.min_area_px = as_double(v, key);
            else if (k == "worker_count")
                p.worker_count = as_int(v, key);
            else if (k == "work_dir")
                p.work_dir = as_path(v, key);
            else
                fail(v, key, "unknown key");
        } else if (section == "predictor") {
            if (k == "command")
                p.predictor_command = as_string(v, key);
            else if (k == "timeout_s")
                p.predictor_timeout = seconds_to_ms(as_double(v, key));
            else if (k == "params") {
                const auto* t = v.as_table();
                if (!t) fail(v, key, "expected a table");
                for (auto&& [pk, pv] : *t) {
                    const std::string name(pk.str());
                    if (pv.is_string())
                        p.predictor_params[name] = *pv.value<std::string>();
                    else if (pv.is_integer())
                        p.predictor_params[name] = std::to_string(*pv.value<std::int64_t>());
                    else if (pv.is_floating_point())
                        p.predictor_params[name] = ojson(*pv.value<double>()).dump();
                    else if (pv.is_boolean())
                        p.predictor_params[name] = *pv.value<bool>() ? "true" : "false";
                    else
                        fail(pv, key + "." + name, "expected a scalar");
                }
            } else
                fail(v, key, "unknown key");
        } else if (section == "eval") {
            if (k == "iou_threshold")
                s_.eval.iou_threshold = as_double(v, key);
            else if (k == "min_score")
                s_.eval.min_score = as_double(v, key);
            else if (k == "pred")
                s_.eval_pred = as_paths(v, key);
            else if (k == "gt")
                s_.eval_gt = as_paths(v, key);
            else if (k == "out")
                s_.eval_out = as_path(v, key);
            else
                fail(v, key, "unknown key");
        } else if (section == "detect") {
            if (k == "image")
                s_.detect_image = as_path(v, key);
            else if (k == "out")
                s_.detect_out = as_path(v, key);
            else if (k == "manifest")
                s_.detect_manifest = as_path(v, key);
            else if (k == "image_id")
                s_.image_id = as_string(v, key);
            else if (k == "frame")
                s_.frame = as_string(v, key);
            else
                fail(v, key, "unknown key");
        } else if (section == "tile") {
            if (k == "image")
                s_.tile_image = as_path(v, key);
            else if (k == "out_dir")
                s_.tile_out_dir = as_path(v, key);
            else
                fail(v, key, "unknown key");
        } else if (section == "convert") {
            if (k == "in")
                s_.convert_in = as_paths(v, key);
            else if (k == "out")
                s_.convert_out = as_path(v, key);
            else if (k == "image_id")
                s_.convert_image_id = as_string(v, key);
            else
                fail(v, key, "unknown key");
        } else {
            fail(v, section, "unknown section");
        }
    }

    fs::path path_;
    Settings& s_;
};

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

// Flag values are applied after the config file so they win.
class Flags {
  public:
    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& name, const std::string& help,
                     std::function<void(const T&)> set) {
        auto value = std::make_shared<T>();
        auto* opt = app->add_option(name, *value, help);
        appliers_.push_back([opt, value, set] {
            if (opt->count() > 0) set(*value);
        });
        return opt;
    }

    void apply() const {
        for (const auto& f : appliers_) f();
    }

  private:
    std::vector<std::function<void()>> appliers_;
};

void add_pipeline_flags(CLI::App* app, Flags& flags, Settings& s, bool tiling_only) {
    auto& p = s.pipeline;
    flags.add<int>(app, "--tile-size", "tile edge in pixels [pipeline.tile_size]",
                   [&p](const int& v) { p.tile_size = v; });
    flags.add<int>(app, "--overlap", "tile overlap in pixels [pipeline.overlap]",
                   [&p](const int& v) { p.overlap = v; });
    if (tiling_only) return;
    flags.add<int>(app, "--points-per-side", "point grid density [pipeline.points_per_side]",
                   [&p](const int& v) { p.points_per_side = v; });
    flags.add<std::string>(app, "--prompt-mode",
                           "automatic-grid | bbox-prompted [pipeline.prompt_mode]",
                           [&s](const std::string& v) {
                               s.pipeline.prompt_mode = prompt_mode_from_string(v);
                               s.prompt_mode_set = true;
                           });
    flags.add<std::string>(app, "--prompt-boxes",
                           "detections file (GeoJSON or CSV) used as box prompts "
                           "[pipeline.prompt_detections_path]",
                           [&p](const std::string& v) { p.prompt_detections_path = v; });
    flags.add<double>(app, "--prompt-min-score", "[pipeline.prompt_min_score]",
                      [&p](const double& v) { p.prompt_min_score = v; });
    flags.add<double>(app, "--nms-iou", "suppression threshold [pipeline.nms_iou]",
                      [&p](const double& v) { p.nms_iou = v; });
    flags.add<std::string>(app, "--nms-mode", "polygon | bbox [pipeline.nms_mode]",
                           [&p](const std::string& v) { p.nms_mode = nms_mode_from_string(v); });
    flags.add<double>(app, "--min-score", "drop detections below [pipeline.min_score]",
                      [&p](const double& v) { p.min_score = v; });
    flags.add<double>(app, "--min-area-px", "drop polygons smaller than [pipeline.min_area_px]",
                      [&p](const double& v) { p.min_area_px = v; });
    flags.add<int>(app, "--workers", "parallel tiles [pipeline.worker_count]",
                   [&p](const int& v) { p.worker_count = v; });
    flags.add<std::string>(app, "--work-dir", "tile scratch directory [pipeline.work_dir]",
                           [&p](const std::string& v) { p.work_dir = fs::path(v); });
    flags.add<std::string>(app, "--predictor",
                           "oracle[:threshold] or a shell command [predictor.command]",
                           [&p](const std::string& v) { p.predictor_command = v; });
    flags.add<double>(app, "--timeout", "per-request timeout, seconds [predictor.timeout_s]",
                      [&p](const double& v) { p.predictor_timeout = seconds_to_ms(v); });
    flags.add<std::vector<std::string>>(
        app, "--param", "key=value passed to the predictor [predictor.params]",
        [&p](const std::vector<std::string>& kvs) {
            for (const auto& kv : kvs) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos || eq == 0) {
                    throw ConfigError("--param expects key=value, got '" + kv + "'");
                }
                p.predictor_params[kv.substr(0, eq)] = kv.substr(eq + 1);
            }
        });
}

// ---------------------------------------------------------------------------
// Effective config
// ---------------------------------------------------------------------------

ojson opt_path(const std::optional<fs::path>& p) { return p ? ojson(p->string()) : ojson(nullptr); }

ojson paths_json(const std::vector<fs::path>& ps) {
    auto a = ojson::array();
    for (const auto& p : ps) a.push_back(p.string());
    return a;
}

ojson pipeline_json(const Settings& s) {
    const auto& p = s.pipeline;
    ojson j;
    j["tile_size"] = p.tile_size;
    j["overlap"] = p.overlap;
    j["points_per_side"] = p.points_per_side;
    j["prompt_mode"] = std::string(to_string(p.prompt_mode));
    j["prompt_detections_path"] =
        p.prompt_detections_path ? ojson(*p.prompt_detections_path) : ojson(nullptr);
    j["prompt_min_score"] = p.prompt_min_score;
    j["nms_iou"] = p.nms_iou;
    j["nms_mode"] = std::string(to_string(p.nms_mode));
    j["min_score"] = p.min_score;
    j["min_area_px"] = p.min_area_px;
    j["worker_count"] = p.worker_count;
    j["work_dir"] = opt_path(p.work_dir);
    return j;
}

ojson predictor_json(const Settings& s) {
    ojson j;
    j["command"] = s.pipeline.predictor_command;
    j["timeout_s"] = static_cast<double>(s.pipeline.predictor_timeout.count()) / 1000.0;
    j["params"] = s.pipeline.predictor_params;
    return j;
}

ojson eval_json(const Settings& s) {
    ojson j;
    j["iou_threshold"] = s.eval.iou_threshold;
    j["min_score"] = s.eval.min_score;
    j["pred"] = paths_json(s.eval_pred);
    j["gt"] = paths_json(s.eval_gt);
    j["out"] = opt_path(s.eval_out);
    return j;
}

ojson effective_config(const Settings& s, const std::string& command) {
    ojson j;
    j["pipeline"] = pipeline_json(s);
    j["predictor"] = predictor_json(s);
    j["eval"] = eval_json(s);
    if (command == "detect") {
        ojson d;
        d["image"] = opt_path(s.detect_image);
        d["out"] = opt_path(s.detect_out);
        d["manifest"] = opt_path(s.detect_manifest);
        d["image_id"] = s.image_id;
        d["frame"] = s.frame;
        j["detect"] = std::move(d);
    } else if (command == "tile") {
        ojson t;
        t["image"] = opt_path(s.tile_image);
        t["out_dir"] = opt_path(s.tile_out_dir);
        j["tile"] = std::move(t);
    } else if (command == "convert") {
        ojson c;
        c["in"] = paths_json(s.convert_in);
        c["out"] = opt_path(s.convert_out);
        c["image_id"] = s.convert_image_id;
        j["convert"] = std::move(c);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::config: return exit_config;
    case ErrorKind::io: return exit_io;
    case ErrorKind::predictor: return exit_predictor;
    case ErrorKind::internal: return exit_internal;
    }
    return exit_internal;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

template <class T>
T require(const std::optional<T>& v, const char* flag) {
    if (!v) throw ConfigError(std::string(flag) + " is required");
    return *v;
}

ojson tiles_json(const std::vector<TileStatus>& tiles) {
    auto a = ojson::array();
    for (const auto& t : tiles) {
        ojson j;
        j["index"] = t.tile_index;
        j["window"] = {t.window.x0, t.window.y0, t.window.width, t.window.height};
        j["status"] = t.status;
        j["segments"] = t.segments;
        j["detections"] = t.detections;
        if (!t.message.empty()) j["message"] = t.message;
        a.push_back(std::move(j));
    }
    return a;
}

int cmd_detect(const Settings& s, std::ostream& out, std::ostream& err) {
    const auto started = std::chrono::steady_clock::now();
    ojson manifest;
    manifest["command"] = "detect";
    manifest["status"] = "failed";
    manifest["exit_code"] = nullptr;
    manifest["error"] = nullptr;
    manifest["config"] = effective_config(s, "detect");

    std::optional<fs::path> manifest_path = s.detect_manifest;
    if (!manifest_path && s.detect_out) manifest_path = s.detect_out->string() + ".manifest.json";

    ojson inputs;
    inputs["image"] = opt_path(s.detect_image);
    inputs["prompt_detections"] = s.pipeline.prompt_detections_path
                                      ? ojson(*s.pipeline.prompt_detections_path)
                                      : ojson(nullptr);
    manifest["inputs"] = std::move(inputs);
    ojson outputs;
    outputs["detections"] = opt_path(s.detect_out);
    outputs["manifest"] = opt_path(manifest_path);
    manifest["outputs"] = std::move(outputs);
    manifest["predictor"] = nullptr;
    manifest["timing"] = {{"started_utc", utc_now()}};

    std::vector<TileStatus> tiles;
    int code = exit_ok;
    std::size_t count = 0;
    try {
        const auto image = require(s.detect_image, "--image");
        const auto out_path = require(s.detect_out, "--out");
        if (!fs::exists(image)) throw IoError("image not found: " + image.string());
        if (s.frame != "auto" && s.frame != "image" && s.frame != "world") {
            throw ConfigError("--frame must be auto, image or world (got '" + s.frame + "')");
        }
        PipelineConfig cfg = s.pipeline;
        if (cfg.prompt_detections_path && !s.prompt_mode_set) {
            cfg.prompt_mode = PromptMode::bbox_prompted;
        }
        if (cfg.prompt_detections_path && cfg.prompt_mode == PromptMode::automatic_grid) {
            throw ConfigError("--prompt-boxes given but prompt mode is automatic-grid");
        }
        manifest["config"]["pipeline"]["prompt_mode"] = std::string(to_string(cfg.prompt_mode));
        validate(cfg);

        const auto raster = load_raster(image);
        if (s.frame == "world" && !raster.geo()) {
            throw ConfigError("--frame world needs a georeferenced image: " + image.string());
        }
        manifest["predictor"] =
            make_predictor(cfg.predictor_command, cfg.predictor_timeout)->identity();

        RunOptions opts;
        opts.image_id = s.image_id.empty() ? image.stem().string() : s.image_id;
        opts.tile_status = &tiles;
        auto result = run(raster, cfg, opts);
        if (s.frame == "world" || (s.frame == "auto" && result.geo_transform)) {
            result = to_world_frame(result);
        }
        count = result.detections.size();
        write_detections(result, out_path);
        manifest["status"] = "ok";
        manifest["detections"] = count;
        manifest["frame"] = std::string(to_string(result.frame));
    } catch (const Error& e) {
        code = exit_code_for(e);
        manifest["error"] = e.what();
        err << "canopy detect: " << e.what() << "\n";
    } catch (const std::exception& e) {
        code = exit_internal;
        manifest["error"] = e.what();
        err << "canopy detect: internal error: " << e.what() << "\n";
    }

    manifest["exit_code"] = code;
    manifest["timing"]["finished_utc"] = utc_now();
    manifest["timing"]["elapsed_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    manifest["tiles"] = tiles_json(tiles);
    if (manifest_path) {
        try {
            write_text_file_atomic(*manifest_path, manifest.dump(2) + "\n");
        } catch (const Error& e) {
            err << "canopy detect: " << e.what() << "\n";
            if (code == exit_ok) code = exit_code_for(e);
        }
    }
    if (code == exit_ok) {
        out << "wrote " << count << " detections to " << s.detect_out->string() << "\n";
    }
    return code;
}

int cmd_tile(const Settings& s, std::ostream& out) {
    const auto image = require(s.tile_image, "--image");
    const auto dir = require(s.tile_out_dir, "--out-dir");
    const auto raster = load_raster(image);
    const auto plan =
        plan_tiles(raster.width(), raster.height(), s.pipeline.tile_size, s.pipeline.overlap);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < plan.windows.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "tile_%04zu", i);
        const auto tile = read_window(raster, plan.windows[i]);
        write_png(tile, dir / (std::string(name) + ".png"));
        if (tile.geo()) write_world_file(tile.geo()->transform, dir / (std::string(name) + ".wld"));
    }
    write_text_file_atomic(dir / "plan.json", plan_to_json(plan));
    out << "wrote " << plan.windows.size() << " tiles and plan.json to " << dir.string() << "\n";
    return exit_ok;
}

bool is_csv(const fs::path& p) { return p.extension() == ".csv"; }

// Detections grouped by image, in the image-pixel frame.
std::map<std::string, std::vector<Detection>>
read_any_detections(const std::vector<fs::path>& paths) {
    std::map<std::string, std::vector<Detection>> out;
    for (const auto& path : paths) {
        if (is_csv(path)) {
            for (auto& [id, dets] : read_box_csv(path)) {
                auto& dst = out[id];
                dst.insert(dst.end(), dets.begin(), dets.end());
            }
            continue;
        }
        auto set = to_pixel_frame(read_detections(path));
        if (set.image_id.empty()) throw ParseError(path.string() + ": missing image_id");
        auto& dst = out[set.image_id];
        dst.insert(dst.end(), set.detections.begin(), set.detections.end());
    }
    return out;
}

int cmd_eval(const Settings& s, std::ostream& out) {
    if (s.eval_pred.empty()) throw ConfigError("--pred is required");
    if (s.eval_gt.empty()) throw ConfigError("--gt is required");
    validate(s.eval);
    const auto preds = read_any_detections(s.eval_pred);
    std::map<std::string, GroundTruthSet> gts;
    for (const auto& path : s.eval_gt) {
        for (auto& [id, gt] : read_ground_truth(path)) {
            auto& dst = gts[id];
            dst.image_id = id;
            dst.boxes.insert(dst.boxes.end(), gt.boxes.begin(), gt.boxes.end());
            dst.polygons.insert(dst.polygons.end(), gt.polygons.begin(), gt.polygons.end());
        }
    }
    const auto report = evaluate(preds, gts, s.eval);
    if (s.eval_out) write_text_file_atomic(*s.eval_out, format_report_json(report));
    out << format_report_table(report);
    return exit_ok;
}

int cmd_convert(const Settings& s, std::ostream& out) {
    if (s.convert_in.empty()) throw ConfigError("--in is required");
    const auto dst = require(s.convert_out, "--out");
    auto by_image = read_any_detections(s.convert_in);
    if (!s.convert_image_id.empty()) {
        const auto it = by_image.find(s.convert_image_id);
        if (it == by_image.end()) {
            throw ConfigError("no detections for image '" + s.convert_image_id + "'");
        }
        auto keep = std::move(*it);
        by_image.clear();
        by_image.insert(std::move(keep));
    }

    std::vector<DetectionSet> sets;
    for (auto& [id, dets] : by_image) {
        DetectionSet set;
        set.image_id = id;
        set.detections = std::move(dets);
        canonical_sort(set.detections);
        set.provenance["generator"] = "canopy";
        set.provenance["converted_from"] = paths_json(s.convert_in);
        sets.push_back(std::move(set));
    }

    std::size_t n = 0;
    if (is_csv(dst)) {
        write_text_file_atomic(dst, format_box_csv(sets));
        for (const auto& set : sets) n += set.detections.size();
    } else {
        if (sets.size() != 1) {
            throw ConfigError("input holds " + std::to_string(sets.size()) +
                              " images; pick one with --image-id");
        }
        write_detections(sets.front(), dst);
        n = sets.front().detections.size();
    }
    out << "wrote " << n << " detections to " << dst.string() << "\n";
    return exit_ok;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Settings s;
    if (const char* env = std::getenv("CANOPY_PREDICTOR"); env && *env) {
        s.pipeline.predictor_command = env;
    }

    CLI::App app{"Tree-crown delineation around a pluggable promptable segmenter", "canopy"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "canopy 0.1.0");
    Flags flags;
    std::string config_path;
    bool print_config = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "TOML config file; flags override it");
        sub->add_flag("--print-config", print_config, "print the effective config and exit");
    };

    auto* detect = app.add_subcommand("detect", "run the pipeline on one image");
    common(detect);
    flags.add<std::string>(detect, "--image", "input raster (.png, .tif) [detect.image]",
                           [&s](const std::string& v) { s.detect_image = v; });
    flags.add<std::string>(detect, "--out", "detections GeoJSON [detect.out]",
                           [&s](const std::string& v) { s.detect_out = v; });
    flags.add<std::string>(detect, "--manifest",
                           "run manifest; default <out>.manifest.json [detect.manifest]",
                           [&s](const std::string& v) { s.detect_manifest = v; });
    flags.add<std::string>(detect, "--image-id", "defaults to the image stem [detect.image_id]",
                           [&s](const std::string& v) { s.image_id = v; });
    flags.add<std::string>(detect, "--frame", "auto | image | world [detect.frame]",
                           [&s](const std::string& v) { s.frame = v; });
    add_pipeline_flags(detect, flags, s, false);

    auto* eval = app.add_subcommand("eval", "score detections against ground truth");
    common(eval);
    flags.add<std::vector<std::string>>(
        eval, "--pred", "prediction file, GeoJSON or CSV; repeatable [eval.pred]",
        [&s](const std::vector<std::string>& v) { s.eval_pred.assign(v.begin(), v.end()); });
    flags.add<std::vector<std::string>>(
        eval, "--gt", "ground-truth file, GeoJSON or CSV; repeatable [eval.gt]",
        [&s](const std::vector<std::string>& v) { s.eval_gt.assign(v.begin(), v.end()); });
    flags.add<std::string>(eval, "--out", "report JSON [eval.out]",
                           [&s](const std::string& v) { s.eval_out = v; });
    flags.add<double>(eval, "--iou", "match threshold [eval.iou_threshold]",
                      [&s](const double& v) { s.eval.iou_threshold = v; });
    flags.add<double>(eval, "--min-score", "ignore predictions below [eval.min_score]",
                      [&s](const double& v) { s.eval.min_score = v; });

    auto* tile = app.add_subcommand("tile", "write tile PNGs and the tiling plan");
    common(tile);
    flags.add<std::string>(tile, "--image", "input raster [tile.image]",
                           [&s](const std::string& v) { s.tile_image = v; });
    flags.add<std::string>(tile, "--out-dir", "output directory [tile.out_dir]",
                           [&s](const std::string& v) { s.tile_out_dir = v; });
    add_pipeline_flags(tile, flags, s, true);

    auto* convert = app.add_subcommand("convert", "convert between box CSV and GeoJSON");
    common(convert);
    flags.add<std::vector<std::string>>(
        convert, "--in", "input files; repeatable [convert.in]",
        [&s](const std::vector<std::string>& v) { s.convert_in.assign(v.begin(), v.end()); });
    flags.add<std::string>(convert, "--out", "output .csv or .geojson [convert.out]",
                           [&s](const std::string& v) { s.convert_out = v; });
    flags.add<std::string>(convert, "--image-id", "select one image [convert.image_id]",
                           [&s](const std::string& v) { s.convert_image_id = v; });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? exit_ok : exit_config;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (!config_path.empty()) ConfigReader(config_path, s).load();
        flags.apply();
        if (print_config) {
            out << effective_config(s, name).dump(2) << "\n";
            return exit_ok;
        }
        if (name == "detect") return cmd_detect(s, out, err);
        if (name == "eval") return cmd_eval(s, out);
        if (name == "tile") return cmd_tile(s, out);
        return cmd_convert(s, out);
    } catch (const Error& e) {
        err << "canopy " << name << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "canopy " << name << ": internal error: " << e.what() << "\n";
        return exit_internal;
    }
}

} // namespace canopy::cli
