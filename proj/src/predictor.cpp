#include "canopy/predictor.hpp"

#include "canopy/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace canopy {

using ojson = nlohmann::ordered_json;

RleMask rle_encode(const BinaryMask& mask) {
    RleMask out{mask.width(), mask.height(), {}};
    std::uint8_t current = 0;
    std::uint64_t run = 0;
    for (const std::uint8_t bit : mask.bits()) {
        if (bit != current) {
            out.runs.push_back(run);
            current = bit;
            run = 0;
        }
        ++run;
    }
    if (run > 0 || out.runs.empty()) out.runs.push_back(run);
    return out;
}

BinaryMask rle_decode(const RleMask& rle) {
    if (rle.width < 0 || rle.height < 0) throw CodecError("RLE mask has negative dimensions");
    const std::uint64_t expected = static_cast<std::uint64_t>(rle.width) * rle.height;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < rle.runs.size(); ++i) {
        if (rle.runs[i] == 0 && i != 0 && expected != 0) {
            throw CodecError("RLE run " + std::to_string(i) + " is zero");
        }
        sum += rle.runs[i];
        if (sum > expected) break;
    }
    if (sum != expected) {
        throw CodecError("RLE runs sum to " + std::to_string(sum) + ", expected " +
                         std::to_string(expected) + " (" + std::to_string(rle.width) + "x" +
                         std::to_string(rle.height) + ")");
    }
    std::vector<std::uint8_t> bits;
    bits.reserve(expected);
    std::uint8_t value = 0;
    for (const auto run : rle.runs) {
        bits.insert(bits.end(), run, value);
        value ^= 1;
    }
    return BinaryMask(rle.width, rle.height, std::move(bits));
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

std::string serialize_request(const PredictorRequest& request) {
    ojson j;
    j["request_id"] = request.request_id;
    j["image_path"] = request.image_path;
    auto points = ojson::array();
    for (const auto& p : request.prompts.points) points.push_back({p.x, p.y});
    j["points"] = std::move(points);
    auto boxes = ojson::array();
    for (const auto& b : request.prompts.boxes) {
        boxes.push_back({b.bbox.xmin, b.bbox.ymin, b.bbox.xmax, b.bbox.ymax});
    }
    j["boxes"] = std::move(boxes);
    auto params = ojson::object();
    for (const auto& [k, v] : request.params) params[k] = v;
    j["params"] = std::move(params);
    return j.dump();
}

namespace {

ojson parse_line(const std::string& line, const char* what) {
    try {
        auto j = ojson::parse(line);
        if (!j.is_object()) throw ProtocolError(std::string(what) + " is not a JSON object");
        return j;
    } catch (const ojson::parse_error& e) {
        throw ProtocolError(std::string("malformed ") + what + " at byte " +
                            std::to_string(e.byte) + ": " + e.what());
    }
}

template <typename Fn>
auto protocol_guard(const char* what, Fn&& fn) {
    try {
        return fn();
    } catch (const ojson::exception& e) {
        throw ProtocolError(std::string("invalid ") + what + ": " + e.what());
    }
}

std::vector<double> numbers(const ojson& arr, std::size_t n, const char* what) {
    if (!arr.is_array() || arr.size() != n) {
        throw ProtocolError(std::string(what) + " must be an array of " + std::to_string(n) +
                            " numbers");
    }
    std::vector<double> out;
    for (const auto& v : arr) {
        if (!v.is_number()) throw ProtocolError(std::string(what) + " holds a non-number");
        out.push_back(v.get<double>());
    }
    return out;
}

} // namespace

PredictorRequest parse_request(const std::string& line) {
    const auto j = parse_line(line, "request");
    return protocol_guard("request", [&] {
        PredictorRequest req;
        req.request_id = j.at("request_id").get<std::string>();
        req.image_path = j.at("image_path").get<std::string>();
        for (const auto& p : j.at("points")) {
            const auto v = numbers(p, 2, "point");
            req.prompts.points.push_back({v[0], v[1]});
        }
        for (const auto& b : j.at("boxes")) {
            const auto v = numbers(b, 4, "box");
            req.prompts.boxes.push_back({BBox{v[0], v[1], v[2], v[3], Frame::tile_px}, {}});
        }
        if (j.contains("params")) {
            for (const auto& [k, v] : j.at("params").items()) {
                req.params[k] = v.get<std::string>();
            }
        }
        return req;
    });
}

std::string serialize_response(const PredictorResponse& response) {
    ojson j;
    j["request_id"] = response.request_id;
    auto segments = ojson::array();
    for (const auto& s : response.segments) {
        ojson seg;
        seg["rle"] = {{"width", s.rle.width}, {"height", s.rle.height}, {"runs", s.rle.runs}};
        seg["score"] = s.score;
        seg["prompt_index"] = s.prompt_index ? ojson(*s.prompt_index) : ojson(nullptr);
        segments.push_back(std::move(seg));
    }
    j["segments"] = std::move(segments);
    return j.dump();
}

PredictorResponse parse_response(const std::string& line) {
    const auto j = parse_line(line, "response");
    if (j.contains("error")) {
        const auto id = j.value("request_id", std::string("?"));
        const auto msg = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
        throw PredictorError("predictor reported an error for request " + id + ": " + msg);
    }
    return protocol_guard("response", [&] {
        PredictorResponse resp;
        resp.request_id = j.at("request_id").get<std::string>();
        for (const auto& s : j.at("segments")) {
            Segment seg;
            const auto& rle = s.at("rle");
            for (const char* key : {"width", "height"}) {
                if (!rle.at(key).is_number_unsigned()) {
                    throw ProtocolError(std::string("rle ") + key +
                                        " must be a non-negative integer");
                }
            }
            seg.rle.width = rle.at("width").get<int>();
            seg.rle.height = rle.at("height").get<int>();
            for (const auto& run : rle.at("runs")) {
                if (!run.is_number_unsigned()) {
                    throw ProtocolError("rle runs must be non-negative integers");
                }
                seg.rle.runs.push_back(run.get<std::uint64_t>());
            }
            seg.score = s.at("score").get<double>();
            if (s.contains("prompt_index") && !s.at("prompt_index").is_null()) {
                seg.prompt_index = s.at("prompt_index").get<int>();
            }
            resp.segments.push_back(std::move(seg));
        }
        return resp;
    });
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

void validate_request(const PredictorRequest& request, int width, int height) {
    if (request.prompts.empty()) {
        throw ProtocolError("request " + request.request_id + " carries no prompts");
    }
    for (const auto& p : request.prompts.points) {
        if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height)) {
            throw ProtocolError("request " + request.request_id + ": point (" +
                                std::to_string(p.x) + "," + std::to_string(p.y) +
                                ") outside the tile");
        }
    }
    for (const auto& b : request.prompts.boxes) {
        if (!b.bbox.valid() || b.bbox.xmin < 0 || b.bbox.ymin < 0 || b.bbox.xmax > width ||
            b.bbox.ymax > height) {
            throw ProtocolError("request " + request.request_id +
                                ": box prompt invalid or outside the tile");
        }
    }
}

void validate_response(const PredictorRequest& request, const PredictorResponse& response,
                       int width, int height) {
    if (response.request_id != request.request_id) {
        throw ProtocolError("response id '" + response.request_id + "' does not match request '" +
                            request.request_id + "'");
    }
    const bool boxed = !request.prompts.boxes.empty();
    for (std::size_t i = 0; i < response.segments.size(); ++i) {
        const auto& s = response.segments[i];
        const std::string where = "request " + request.request_id + " segment " + std::to_string(i);
        if (s.rle.width != width || s.rle.height != height) {
            throw ProtocolError(where + ": mask is " + std::to_string(s.rle.width) + "x" +
                                std::to_string(s.rle.height) + ", tile is " +
                                std::to_string(width) + "x" + std::to_string(height));
        }
        if (!(s.score >= 0.0 && s.score <= 1.0)) {
            throw ProtocolError(where + ": score outside [0,1]");
        }
        if (boxed) {
            if (!s.prompt_index || *s.prompt_index < 0 ||
                *s.prompt_index >= static_cast<int>(request.prompts.boxes.size())) {
                throw ProtocolError(where + ": missing or invalid prompt_index");
            }
        }
        try {
            rle_decode(s.rle);
        } catch (const CodecError& e) {
            throw ProtocolError(where + ": " + e.what());
        }
    }
}

} // namespace

PredictorResponse segment(Predictor& predictor, const PredictorRequest& request,
                          const RasterImage& tile) {
    validate_request(request, tile.width(), tile.height());
    auto response = predictor.predict(request, tile);
    validate_response(request, response, tile.width(), tile.height());
    return response;
}

PredictorResponse segment(Predictor& predictor, const PredictorRequest& request) {
    return segment(predictor, request, load_raster(request.image_path));
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

namespace {

double fill_ratio(const BinaryMask& m) {
    const BBox box = bbox_from_mask(m);
    return static_cast<double>(m.count()) / box.area();
}

// 8-connected labels of `fg`; -1 for background.
std::vector<int> label_components(const BinaryMask& fg) {
    const int w = fg.width();
    const int h = fg.height();
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    std::vector<int> stack;
    int next = 0;
    for (int start = 0; start < w * h; ++start) {
        if (!fg.bits()[start] || label[start] >= 0) continue;
        label[start] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            const int cc = cur % w, cr = cur / w;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int nc = cc + dc, nr = cr + dr;
                    if (!fg.in_bounds(nc, nr) || !fg.get(nc, nr)) continue;
                    const int n = nr * w + nc;
                    if (label[n] >= 0) continue;
                    label[n] = next;
                    stack.push_back(n);
                }
            }
        }
        ++next;
    }
    return label;
}

} // namespace

PredictorResponse oracle_segment(const RasterImage& tile, const PromptSet& prompts,
                                 int luminance_threshold) {
    const int w = tile.width();
    const int h = tile.height();
    BinaryMask fg(w, h);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (tile.luminance(c, r) >= luminance_threshold) fg.set(c, r);
        }
    }

    PredictorResponse out;
    if (!prompts.boxes.empty()) {
        for (std::size_t i = 0; i < prompts.boxes.size(); ++i) {
            const BBox& b = prompts.boxes[i].bbox;
            const int c0 = std::clamp(static_cast<int>(std::floor(b.xmin)), 0, w);
            const int c1 = std::clamp(static_cast<int>(std::ceil(b.xmax)), 0, w);
            const int r0 = std::clamp(static_cast<int>(std::floor(b.ymin)), 0, h);
            const int r1 = std::clamp(static_cast<int>(std::ceil(b.ymax)), 0, h);
            BinaryMask inside(w, h);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    if (fg.get(c, r)) inside.set(c, r);
                }
            }
            const BinaryMask comp = largest_component(inside);
            if (comp.empty()) continue;
            out.segments.push_back({rle_encode(comp), fill_ratio(comp), static_cast<int>(i)});
        }
        return out;
    }

    const auto label = label_components(fg);
    std::vector<int> seen;
    for (const auto& p : prompts.points) {
        const int c = std::clamp(static_cast<int>(std::floor(p.x)), 0, w - 1);
        const int r = std::clamp(static_cast<int>(std::floor(p.y)), 0, h - 1);
        const int id = label[static_cast<std::size_t>(r) * w + c];
        if (id < 0 || std::find(seen.begin(), seen.end(), id) != seen.end()) continue;
        seen.push_back(id);
        BinaryMask comp(w, h);
        for (std::size_t k = 0; k < label.size(); ++k) {
            if (label[k] == id) comp.set(static_cast<int>(k % w), static_cast<int>(k / w));
        }
        out.segments.push_back({rle_encode(comp), fill_ratio(comp), std::nullopt});
    }
    return out;
}

std::string OraclePredictor::identity() const {
    return "oracle:luminance>=" + std::to_string(threshold_);
}

PredictorResponse OraclePredictor::predict(const PredictorRequest& request,
                                           const RasterImage& tile) {
    auto response = oracle_segment(tile, request.prompts, threshold_);
    response.request_id = request.request_id;
    return response;
}

std::unique_ptr<Predictor> make_predictor(const std::string& spec,
                                          std::chrono::milliseconds timeout) {
    if (spec == "oracle") return std::make_unique<OraclePredictor>();
    if (spec.rfind("oracle:", 0) == 0) {
        const auto value = spec.substr(7);
        int threshold = 0;
        try {
            std::size_t used = 0;
            threshold = std::stoi(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw ConfigError("oracle threshold must be an integer, got '" + value + "'");
        }
        if (threshold < 0 || threshold > 255) {
            throw ConfigError("oracle threshold must be in [0,255]");
        }
        return std::make_unique<OraclePredictor>(threshold);
    }
    if (spec.empty()) throw ConfigError("no predictor configured");
    return std::make_unique<SubprocessPredictor>(spec, timeout);
}

} // namespace canopy
