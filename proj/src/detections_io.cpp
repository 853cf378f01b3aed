#include "canopy/detections_io.hpp"

#include "canopy/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

namespace canopy {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// DetectionSet helpers
// ---------------------------------------------------------------------------

void canonical_sort(std::vector<Detection>& dets) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (std::tie(a.bbox.xmin, a.bbox.ymin) != std::tie(b.bbox.xmin, b.bbox.ymin)) {
            return std::tie(a.bbox.xmin, a.bbox.ymin) < std::tie(b.bbox.xmin, b.bbox.ymin);
        }
        return ranks_before(a, b);
    });
}

namespace {

Detection reframe(const Detection& d, Polygon polygon) {
    Detection out = d;
    out.bbox = polygon_bbox(polygon);
    out.polygon = std::move(polygon);
    return out;
}

} // namespace

DetectionSet to_world_frame(const DetectionSet& set) {
    if (set.frame == Frame::world) return set;
    if (set.frame != Frame::image_px) {
        throw FrameError("only image-pixel detections can be lifted to the world frame");
    }
    if (!set.geo_transform) throw FrameError("detection set has no geo transform");
    DetectionSet out = set;
    out.frame = Frame::world;
    out.detections.clear();
    for (const auto& d : set.detections) {
        out.detections.push_back(
            reframe(d, transform(d.polygon, *set.geo_transform, Frame::world)));
    }
    canonical_sort(out.detections);
    return out;
}

DetectionSet to_pixel_frame(const DetectionSet& set) {
    if (set.frame == Frame::image_px) return set;
    if (set.frame != Frame::world) throw FrameError("tile-local sets have no image placement");
    if (!set.geo_transform) throw FrameError("world-frame set has no geo transform");
    const auto& t = *set.geo_transform;
    DetectionSet out = set;
    out.frame = Frame::image_px;
    out.detections.clear();
    for (const auto& d : set.detections) {
        std::vector<Point> pts;
        for (const auto& v : d.polygon.vertices()) {
            const auto px = world_to_pixel(t, v.x, v.y);
            pts.push_back({px.col, px.row});
        }
        out.detections.push_back(reframe(d, Polygon(std::move(pts), Frame::image_px)));
    }
    canonical_sort(out.detections);
    return out;
}

// ---------------------------------------------------------------------------
// GeoJSON
// ---------------------------------------------------------------------------

namespace {

std::string shortest(double v) {
    if (v == 0.0) return "0";
    char buf[512];
    // Plain digits for map-sized magnitudes, exponent form otherwise.
    const double a = std::abs(v);
    const auto fmt = a >= 1e-6 && a < 1e16 ? std::chars_format::fixed : std::chars_format::general;
    const auto res = std::to_chars(buf, buf + sizeof buf, v, fmt);
    return std::string(buf, res.ptr);
}

std::string nine_digits(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string quote(const std::string& s) { return ojson(s).dump(); }

void append_point(std::string& out, const Point& p) {
    out += '[';
    out += shortest(p.x);
    out += ',';
    out += shortest(p.y);
    out += ']';
}

} // namespace

std::string format_detections(const DetectionSet& set) {
    std::vector<Detection> dets = set.detections;
    canonical_sort(dets);

    std::string out = "{\"type\":\"FeatureCollection\"";
    out += ",\"frame\":" + quote(std::string(to_string(set.frame)));
    out += ",\"image_id\":" + quote(set.image_id);
    if (set.crs_id) {
        out += ",\"crs_id\":" + quote(*set.crs_id);
        out += ",\"crs\":{\"type\":\"name\",\"properties\":{\"name\":" + quote(*set.crs_id) + "}}";
    }
    if (set.geo_transform) {
        const auto& t = *set.geo_transform;
        out += ",\"geotransform\":[" + shortest(t.a) + "," + shortest(t.b) + "," + shortest(t.c) +
               "," + shortest(t.d) + "," + shortest(t.e) + "," + shortest(t.f) + "]";
    }
    out += ",\"provenance\":" + set.provenance.dump();
    out += ",\"features\":[";
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const auto& d = dets[i];
        if (d.frame() != set.frame) {
            throw FrameError("detection frame " + std::string(to_string(d.frame())) +
                             " differs from set frame " + std::string(to_string(set.frame)));
        }
        out += i == 0 ? "\n" : ",\n";
        out += "{\"type\":\"Feature\",\"geometry\":{\"type\":\"Polygon\",\"coordinates\":[[";
        for (const auto& v : d.polygon.vertices()) {
            append_point(out, v);
            out += ',';
        }
        append_point(out, d.polygon.vertices().front());
        out += "]]},\"properties\":{";
        out += "\"score\":" + nine_digits(d.score);
        out += ",\"source\":" + quote(std::string(to_string(d.source)));
        out += ",\"bbox\":[" + shortest(d.bbox.xmin) + "," + shortest(d.bbox.ymin) + "," +
               shortest(d.bbox.xmax) + "," + shortest(d.bbox.ymax) + "]";
        out += ",\"image_id\":" + quote(set.image_id);
        if (d.tile_index) out += ",\"tile_index\":" + std::to_string(*d.tile_index);
        if (d.prompt_index) out += ",\"prompt_index\":" + std::to_string(*d.prompt_index);
        for (const auto& [k, raw] : d.extra) out += "," + quote(k) + ":" + raw;
        out += "}}";
    }
    out += dets.empty() ? "]}\n" : "\n]}\n";
    return out;
}

void write_detections(const DetectionSet& set, const std::filesystem::path& path) {
    write_text_file_atomic(path, format_detections(set));
}

namespace {

constexpr const char* known_properties[] = {"score",    "source",     "bbox",
                                            "image_id", "tile_index", "prompt_index"};

Detection parse_feature(const ojson& f, Frame frame) {
    if (f.value("type", "") != "Feature") throw ParseError("not a Feature");
    const auto& geom = f.at("geometry");
    if (geom.at("type").get<std::string>() != "Polygon") {
        throw ParseError("geometry type must be Polygon");
    }
    const auto& rings = geom.at("coordinates");
    if (!rings.is_array() || rings.empty()) throw ParseError("polygon has no rings");
    std::vector<Point> pts;
    for (const auto& c : rings.at(0)) {
        if (!c.is_array() || c.size() < 2) throw ParseError("coordinate is not a position");
        pts.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    }
    if (pts.size() < 4 || !(pts.front() == pts.back())) {
        throw ParseError("polygon ring must be closed with at least 4 positions");
    }
    pts.pop_back();

    const auto& props = f.at("properties");
    Polygon poly(std::move(pts), frame);
    const double score = props.at("score").get<double>();
    const auto source = source_from_string(props.value("source", "external-detector"));
    Detection d = make_detection(std::move(poly), score, source);
    if (props.contains("bbox")) {
        const auto b = props.at("bbox").get<std::vector<double>>();
        if (b.size() != 4) throw ParseError("bbox must have 4 entries");
        const double scale =
            std::max({1.0, std::abs(b[0]), std::abs(b[1]), std::abs(b[2]), std::abs(b[3])});
        const double tol = 1e-9 * scale;
        if (std::abs(b[0] - d.bbox.xmin) > tol || std::abs(b[1] - d.bbox.ymin) > tol ||
            std::abs(b[2] - d.bbox.xmax) > tol || std::abs(b[3] - d.bbox.ymax) > tol) {
            throw ParseError("bbox property disagrees with the polygon's hull");
        }
    }
    if (props.contains("tile_index") && !props.at("tile_index").is_null()) {
        d.tile_index = props.at("tile_index").get<int>();
    }
    if (props.contains("prompt_index") && !props.at("prompt_index").is_null()) {
        d.prompt_index = props.at("prompt_index").get<int>();
    }
    for (const auto& [k, v] : props.items()) {
        if (std::find(std::begin(known_properties), std::end(known_properties), k) ==
            std::end(known_properties)) {
            d.extra[k] = v.dump();
        }
    }
    return d;
}

} // namespace

DetectionSet parse_detections(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const ojson::parse_error& e) {
        throw ParseError("malformed detections file at byte offset " + std::to_string(e.byte) +
                         ": " + e.what());
    }

    DetectionSet set;
    try {
        if (!j.is_object() || j.value("type", "") != "FeatureCollection") {
            throw ParseError("top level is not a FeatureCollection");
        }
        set.frame = frame_from_string(j.value("frame", "image_px"));
        set.image_id = j.value("image_id", "");
        if (j.contains("crs_id")) {
            set.crs_id = j.at("crs_id").get<std::string>();
        } else if (j.contains("crs")) {
            set.crs_id = j.at("crs").at("properties").at("name").get<std::string>();
        }
        if (j.contains("geotransform")) {
            const auto g = j.at("geotransform").get<std::vector<double>>();
            if (g.size() != 6) throw ParseError("geotransform must have 6 entries");
            set.geo_transform = AffineGeoTransform{g[0], g[1], g[2], g[3], g[4], g[5]};
        }
        if (j.contains("provenance")) set.provenance = j.at("provenance");
    } catch (const ojson::exception& e) {
        throw ParseError(std::string("malformed detections header: ") + e.what());
    }

    const auto& features = j.contains("features") ? j.at("features") : ojson::array();
    if (!features.is_array()) throw ParseError("features is not an array");
    for (std::size_t i = 0; i < features.size(); ++i) {
        try {
            auto d = parse_feature(features[i], set.frame);
            if (set.image_id.empty()) {
                set.image_id = features[i].at("properties").value("image_id", "");
            }
            set.detections.push_back(std::move(d));
        } catch (const ojson::exception& e) {
            throw ParseError("feature " + std::to_string(i) + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError("feature " + std::to_string(i) + ": " + e.what());
        }
    }
    return set;
}

DetectionSet read_detections(const std::filesystem::path& path) {
    try {
        return parse_detections(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
            cur += c;
        } else if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

double to_number(const std::string& s, std::size_t line, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("CSV line " + std::to_string(line) + ": column " + column +
                         " is not a number: '" + s + "'");
    }
}

} // namespace

std::map<std::string, std::vector<Detection>> parse_box_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (header.empty() && std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) header = split_csv(line);
    }
    if (header.empty()) throw ParseError("CSV has no header");

    auto column = [&](const std::string& name) -> int {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int c_id = column("image_id") >= 0 ? column("image_id") : column("image_path");
    const int c_xmin = column("xmin"), c_ymin = column("ymin");
    const int c_xmax = column("xmax"), c_ymax = column("ymax");
    const int c_score = column("score");
    if (c_id < 0 || c_xmin < 0 || c_ymin < 0 || c_xmax < 0 || c_ymax < 0) {
        throw ParseError("CSV header must contain image_id, xmin, ymin, xmax, ymax");
    }
    const bool from_path = column("image_id") < 0;

    std::map<std::string, std::vector<Detection>> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() < header.size()) {
            throw ParseError("CSV line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " fields, expected " +
                             std::to_string(header.size()));
        }
        std::string id = cells[c_id];
        if (from_path) id = std::filesystem::path(id).stem().string();
        const BBox box{to_number(cells[c_xmin], line_no, "xmin"),
                       to_number(cells[c_ymin], line_no, "ymin"),
                       to_number(cells[c_xmax], line_no, "xmax"),
                       to_number(cells[c_ymax], line_no, "ymax"), Frame::image_px};
        if (!box.valid()) {
            throw ParseError("CSV line " + std::to_string(line_no) + ": empty or inverted box");
        }
        const double score = c_score >= 0 ? to_number(cells[c_score], line_no, "score") : 1.0;
        if (!(score >= 0.0 && score <= 1.0)) {
            throw ParseError("CSV line " + std::to_string(line_no) + ": score outside [0,1]");
        }
        out[id].push_back(make_box_detection(box, score, DetectionSource::external_detector));
    }
    return out;
}

std::map<std::string, std::vector<Detection>> read_box_csv(const std::filesystem::path& path) {
    try {
        return parse_box_csv(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::string format_box_csv(const std::vector<DetectionSet>& sets) {
    std::string out = "image_id,xmin,ymin,xmax,ymax,score\n";
    for (const auto& set : sets) {
        std::vector<Detection> dets = set.detections;
        canonical_sort(dets);
        for (const auto& d : dets) {
            out += set.image_id + "," + shortest(d.bbox.xmin) + "," + shortest(d.bbox.ymin) + "," +
                   shortest(d.bbox.xmax) + "," + shortest(d.bbox.ymax) + "," +
                   nine_digits(d.score) + "\n";
        }
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

} // namespace canopy
