#include "canopy/geometry.hpp"

#include "canopy/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <tuple>

namespace canopy {

std::string_view to_string(Frame frame) {
    switch (frame) {
    case Frame::tile_px: return "tile_px";
    case Frame::image_px: return "image_px";
    case Frame::world: return "world";
    }
    return "unknown";
}

Frame frame_from_string(std::string_view text) {
    if (text == "tile_px") return Frame::tile_px;
    if (text == "image_px") return Frame::image_px;
    if (text == "world") return Frame::world;
    throw ParseError("unknown coordinate frame '" + std::string(text) + "'");
}

std::string_view to_string(DetectionSource source) {
    switch (source) {
    case DetectionSource::automatic_grid: return "automatic-grid";
    case DetectionSource::bbox_prompted: return "bbox-prompted";
    case DetectionSource::external_detector: return "external-detector";
    }
    return "unknown";
}

DetectionSource source_from_string(std::string_view text) {
    if (text == "automatic-grid") return DetectionSource::automatic_grid;
    if (text == "bbox-prompted") return DetectionSource::bbox_prompted;
    if (text == "external-detector") return DetectionSource::external_detector;
    throw ParseError("unknown detection source '" + std::string(text) + "'");
}

std::string_view to_string(NmsMode mode) { return mode == NmsMode::polygon ? "polygon" : "bbox"; }

NmsMode nms_mode_from_string(std::string_view text) {
    if (text == "polygon") return NmsMode::polygon;
    if (text == "bbox") return NmsMode::bbox;
    throw ConfigError("unknown NMS mode '" + std::string(text) + "' (expected polygon|bbox)");
}

// ---------------------------------------------------------------------------
// BinaryMask
// ---------------------------------------------------------------------------

BinaryMask::BinaryMask(int width, int height)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0) {
    if (width < 0 || height < 0) throw ConfigError("mask dimensions must be non-negative");
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 0 || height < 0) throw ConfigError("mask dimensions must be non-negative");
    if (bits_.size() != static_cast<std::size_t>(width) * height) {
        throw ConfigError("mask has " + std::to_string(bits_.size()) + " bits, expected " +
                          std::to_string(static_cast<std::size_t>(width) * height));
    }
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Polygon
// ---------------------------------------------------------------------------

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int sign(double v) { return (v > 0) - (v < 0); }

bool within_span(const Point& a, const Point& b, const Point& p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

// True when segments ab and cd share more than a common endpoint.
bool segments_conflict(const Point& a, const Point& b, const Point& c, const Point& d) {
    const int o1 = sign(cross(a, b, c));
    const int o2 = sign(cross(a, b, d));
    const int o3 = sign(cross(c, d, a));
    const int o4 = sign(cross(c, d, b));

    if (o1 * o2 < 0 && o3 * o4 < 0) return true;

    if (o1 == 0 && o2 == 0) {
        // Collinear: conflict iff the overlap has positive length.
        const bool horizontal = std::abs(b.x - a.x) >= std::abs(b.y - a.y);
        auto key = [&](const Point& p) { return horizontal ? p.x : p.y; };
        const double lo = std::max(std::min(key(a), key(b)), std::min(key(c), key(d)));
        const double hi = std::min(std::max(key(a), key(b)), std::max(key(c), key(d)));
        return hi > lo;
    }

    // An endpoint resting on the other segment is only allowed if it is a
    // shared endpoint.
    auto shared = [&](const Point& p) { return p == a || p == b; };
    auto shared_cd = [&](const Point& p) { return p == c || p == d; };
    if (o1 == 0 && within_span(a, b, c) && !shared(c)) return true;
    if (o2 == 0 && within_span(a, b, d) && !shared(d)) return true;
    if (o3 == 0 && within_span(c, d, a) && !shared_cd(a)) return true;
    if (o4 == 0 && within_span(c, d, b) && !shared_cd(b)) return true;
    return false;
}

} // namespace

double signed_area(std::span<const Point> ring) {
    const std::size_t n = ring.size();
    if (n < 3) return 0.0;
    // Relative to the first vertex to limit cancellation in world coordinates.
    const Point o = ring[0];
    double sum = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) sum += cross(o, ring[i], ring[i + 1]);
    return 0.5 * sum;
}

bool is_simple(std::span<const Point> ring) {
    const std::size_t n = ring.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = ring[i];
        const Point& b = ring[(i + 1) % n];
        // Adjacent edge folding back onto this one.
        const Point& c = ring[(i + 2) % n];
        if (sign(cross(a, b, c)) == 0 &&
            (c.x - b.x) * (b.x - a.x) + (c.y - b.y) * (b.y - a.y) < 0) {
            return false;
        }
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            if (segments_conflict(a, b, ring[j], ring[(j + 1) % n])) return false;
        }
    }
    return true;
}

Polygon::Polygon(std::vector<Point> vertices, Frame frame) : frame_(frame) {
    std::vector<Point> ring;
    ring.reserve(vertices.size());
    for (const auto& v : vertices) {
        if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
            throw EmptyGeometryError("polygon vertex is not finite");
        }
        if (ring.empty() || !(ring.back() == v)) ring.push_back(v);
    }
    while (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
    if (ring.size() < 3) {
        throw EmptyGeometryError("polygon needs at least 3 distinct vertices, got " +
                                 std::to_string(ring.size()));
    }
    const double area = signed_area(ring);
    if (area == 0.0) throw EmptyGeometryError("polygon has zero area");
    if (area < 0) std::reverse(ring.begin(), ring.end());
    if (!is_simple(ring)) throw EmptyGeometryError("polygon is self-intersecting");

    const auto start =
        std::min_element(ring.begin(), ring.end(), [](const Point& a, const Point& b) {
            return std::tie(a.y, a.x) < std::tie(b.y, b.x);
        });
    std::rotate(ring.begin(), start, ring.end());

    rectilinear_ = true;
    for (std::size_t i = 0; i < ring.size(); ++i) {
        const Point& a = ring[i];
        const Point& b = ring[(i + 1) % ring.size()];
        if (a.x != b.x && a.y != b.y) {
            rectilinear_ = false;
            break;
        }
    }
    vertices_ = std::move(ring);
}

Polygon box_polygon(const BBox& box) {
    if (!box.valid()) throw EmptyGeometryError("box has no area");
    return Polygon(
        {{box.xmin, box.ymin}, {box.xmax, box.ymin}, {box.xmax, box.ymax}, {box.xmin, box.ymax}},
        box.frame);
}

double polygon_area(const Polygon& p) { return signed_area(p.vertices()); }

BBox polygon_bbox(const Polygon& p) {
    BBox box{p.vertices()[0].x, p.vertices()[0].y, p.vertices()[0].x, p.vertices()[0].y, p.frame()};
    for (const auto& v : p.vertices()) {
        box.xmin = std::min(box.xmin, v.x);
        box.ymin = std::min(box.ymin, v.y);
        box.xmax = std::max(box.xmax, v.x);
        box.ymax = std::max(box.ymax, v.y);
    }
    return box;
}

Polygon translate(const Polygon& p, double dx, double dy, Frame frame) {
    std::vector<Point> out;
    out.reserve(p.size());
    for (const auto& v : p.vertices()) out.push_back({v.x + dx, v.y + dy});
    return Polygon(std::move(out), frame);
}

Polygon transform(const Polygon& p, const AffineGeoTransform& t, Frame frame) {
    std::vector<Point> out;
    out.reserve(p.size());
    for (const auto& v : p.vertices()) {
        const auto w = pixel_to_world(t, v.x, v.y);
        out.push_back({w.x, w.y});
    }
    return Polygon(std::move(out), frame);
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

Detection make_detection(Polygon polygon, double score, DetectionSource source,
                         std::optional<int> tile_index) {
    if (!(score >= 0.0 && score <= 1.0)) {
        throw ConfigError("detection score " + std::to_string(score) + " outside [0,1]");
    }
    BBox box = polygon_bbox(polygon);
    return Detection{std::move(polygon), box, score, source, tile_index, std::nullopt, {}};
}

Detection make_box_detection(const BBox& box, double score, DetectionSource source) {
    return make_detection(box_polygon(box), score, source);
}

bool ranks_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    const double area_a = polygon_area(a.polygon);
    const double area_b = polygon_area(b.polygon);
    if (area_a != area_b) return area_a > area_b;
    const auto box_key = [](const BBox& x) { return std::tie(x.xmin, x.ymin, x.xmax, x.ymax); };
    if (box_key(a.bbox) != box_key(b.bbox)) return box_key(a.bbox) < box_key(b.bbox);
    if (a.polygon.size() != b.polygon.size()) return a.polygon.size() < b.polygon.size();
    if (a.polygon.vertices() != b.polygon.vertices()) {
        return a.polygon.vertices() < b.polygon.vertices();
    }
    return std::tie(a.source, a.tile_index, a.prompt_index, a.extra) <
           std::tie(b.source, b.tile_index, b.prompt_index, b.extra);
}

// ---------------------------------------------------------------------------
// Mask post-processing
// ---------------------------------------------------------------------------

BinaryMask largest_component(const BinaryMask& mask) {
    const int w = mask.width();
    const int h = mask.height();
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    std::vector<int> stack;

    int best_label = -1;
    std::size_t best_size = 0;
    int next_label = 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto idx = static_cast<std::size_t>(r) * w + c;
            if (!mask.get(c, r) || label[idx] >= 0) continue;
            const int id = next_label++;
            std::size_t size = 0;
            label[idx] = id;
            stack.assign(1, static_cast<int>(idx));
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                ++size;
                const int cc = cur % w;
                const int cr = cur / w;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nc = cc + dc;
                        const int nr = cr + dr;
                        if (!mask.in_bounds(nc, nr) || !mask.get(nc, nr)) continue;
                        const auto nidx = static_cast<std::size_t>(nr) * w + nc;
                        if (label[nidx] >= 0) continue;
                        label[nidx] = id;
                        stack.push_back(static_cast<int>(nidx));
                    }
                }
            }
            // Strictly larger: earlier components win ties.
            if (size > best_size) {
                best_size = size;
                best_label = id;
            }
        }
    }

    BinaryMask out(w, h);
    if (best_label < 0) return out;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (label[static_cast<std::size_t>(r) * w + c] == best_label) out.set(c, r);
        }
    }
    return out;
}

BBox bbox_from_mask(const BinaryMask& mask, Frame frame) {
    int cmin = mask.width(), rmin = mask.height(), cmax = -1, rmax = -1;
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (!mask.get(c, r)) continue;
            cmin = std::min(cmin, c);
            cmax = std::max(cmax, c);
            rmin = std::min(rmin, r);
            rmax = std::max(rmax, r);
        }
    }
    if (cmax < 0) throw EmptyGeometryError("cannot take the bounding box of an empty mask");
    return BBox{static_cast<double>(cmin), static_cast<double>(rmin), static_cast<double>(cmax + 1),
                static_cast<double>(rmax + 1), frame};
}

namespace {

// Edge directions in image coordinates (y grows downward).
constexpr std::array<int, 4> dir_dx{1, 0, -1, 0};
constexpr std::array<int, 4> dir_dy{0, 1, 0, -1};
constexpr int east = 0, south = 1, west = 2, north = 3;

} // namespace

Polygon mask_to_polygon(const BinaryMask& mask, Frame frame) {
    const BinaryMask comp = largest_component(mask);
    const int w = comp.width();
    const int h = comp.height();

    int start_c = -1, start_r = -1;
    for (int r = 0; r < h && start_c < 0; ++r) {
        for (int c = 0; c < w; ++c) {
            if (comp.get(c, r)) {
                start_c = c;
                start_r = r;
                break;
            }
        }
    }
    if (start_c < 0) throw EmptyGeometryError("cannot polygonize an empty mask");

    // Boundary edges run with the foreground pixel on their left (in the
    // positive-shoelace sense). Each grid vertex stores its outgoing edges as a
    // 4-bit direction set.
    const int vw = w + 1;
    std::vector<std::uint8_t> out_edges(static_cast<std::size_t>(vw) * (h + 1), 0);
    auto fg = [&](int c, int r) { return comp.in_bounds(c, r) && comp.get(c, r); };
    auto add = [&](int x, int y, int dir) {
        out_edges[static_cast<std::size_t>(y) * vw + x] |= static_cast<std::uint8_t>(1u << dir);
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!comp.get(c, r)) continue;
            if (!fg(c, r - 1)) add(c, r, east);
            if (!fg(c + 1, r)) add(c + 1, r, south);
            if (!fg(c, r + 1)) add(c + 1, r + 1, west);
            if (!fg(c - 1, r)) add(c, r + 1, north);
        }
    }

    // Walk the outer loop from the top edge of the first pixel. Where two
    // boundaries meet diagonally, prefer the right turn so diagonal neighbours
    // stay in one ring.
    std::vector<Point> ring;
    int x = start_c, y = start_r, dir = east;
    const int x0 = x, y0 = y;
    int prev_dir = north;
    do {
        if (dir != prev_dir) ring.push_back({static_cast<double>(x), static_cast<double>(y)});
        auto& slot = out_edges[static_cast<std::size_t>(y) * vw + x];
        slot = static_cast<std::uint8_t>(slot & ~(1u << dir));
        x += dir_dx[dir];
        y += dir_dy[dir];
        prev_dir = dir;
        const std::uint8_t avail = out_edges[static_cast<std::size_t>(y) * vw + x];
        const int right = (dir + 3) % 4;
        const int straight = dir;
        const int left = (dir + 1) % 4;
        if (avail & (1u << right)) {
            dir = right;
        } else if (avail & (1u << straight)) {
            dir = straight;
        } else if (avail & (1u << left)) {
            dir = left;
        } else {
            break;
        }
    } while (!(x == x0 && y == y0 && dir == east));
    if (!(x == x0 && y == y0)) throw PlumbingError("mask boundary trace did not close");
    if (prev_dir == east && !ring.empty()) {
        // Arrived heading east: the start vertex is collinear, drop it.
        ring.erase(ring.begin());
    }
    return Polygon(std::move(ring), frame);
}

// ---------------------------------------------------------------------------
// Intersection areas
// ---------------------------------------------------------------------------

namespace {

using Triangle = std::array<Point, 3>;

struct Box2 {
    double xmin, ymin, xmax, ymax;
};

Box2 box_of(std::span<const Point> pts) {
    Box2 b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
    for (const auto& p : pts) {
        b.xmin = std::min(b.xmin, p.x);
        b.ymin = std::min(b.ymin, p.y);
        b.xmax = std::max(b.xmax, p.x);
        b.ymax = std::max(b.ymax, p.y);
    }
    return b;
}

bool boxes_overlap(const Box2& a, const Box2& b) {
    return a.xmin < b.xmax && b.xmin < a.xmax && a.ymin < b.ymax && b.ymin < a.ymax;
}

// Area of the intersection of two counter-clockwise convex polygons
// (Sutherland-Hodgman, clipping `subject` by each edge of `clip`).
double convex_intersection_area(std::vector<Point> subject, std::span<const Point> clip) {
    std::vector<Point> next;
    for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
        const Point& a = clip[i];
        const Point& b = clip[(i + 1) % clip.size()];
        next.clear();
        for (std::size_t j = 0; j < subject.size(); ++j) {
            const Point& p = subject[j];
            const Point& q = subject[(j + 1) % subject.size()];
            const double sp = cross(a, b, p);
            const double sq = cross(a, b, q);
            if (sp >= 0) next.push_back(p);
            if ((sp >= 0) != (sq >= 0)) {
                const double t = sp / (sp - sq);
                next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
            }
        }
        subject.swap(next);
    }
    return subject.size() < 3 ? 0.0 : std::abs(signed_area(subject));
}

struct FanTriangle {
    Triangle tri; // counter-clockwise
    int sign;
    Box2 box;
};

std::vector<FanTriangle> fan(const std::vector<Point>& ring, const Point& origin) {
    std::vector<FanTriangle> out;
    out.reserve(ring.size());
    for (std::size_t i = 0; i < ring.size(); ++i) {
        Triangle t{Point{0.0, 0.0}, Point{ring[i].x - origin.x, ring[i].y - origin.y},
                   Point{ring[(i + 1) % ring.size()].x - origin.x,
                         ring[(i + 1) % ring.size()].y - origin.y}};
        const double c = cross(t[0], t[1], t[2]);
        if (c == 0.0) continue;
        int s = 1;
        if (c < 0) {
            std::swap(t[1], t[2]);
            s = -1;
        }
        out.push_back({t, s, box_of(t)});
    }
    return out;
}

// x-intervals of the polygon's interior along the horizontal line y = ym.
void slab_intervals(const std::vector<Point>& ring, double ym, std::vector<double>& xs) {
    xs.clear();
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = ring[i];
        const Point& b = ring[(i + 1) % n];
        if (a.x != b.x) continue;
        if ((a.y < ym) != (b.y < ym)) xs.push_back(a.x);
    }
    std::sort(xs.begin(), xs.end());
}

double overlap_length(const std::vector<double>& p, const std::vector<double>& q) {
    double total = 0.0;
    std::size_t i = 0, j = 0;
    while (i + 1 < p.size() && j + 1 < q.size()) {
        const double lo = std::max(p[i], q[j]);
        const double hi = std::min(p[i + 1], q[j + 1]);
        if (hi > lo) total += hi - lo;
        if (p[i + 1] < q[j + 1]) {
            i += 2;
        } else {
            j += 2;
        }
    }
    return total;
}

void require_same_frame(Frame a, Frame b) {
    if (a != b) {
        throw FrameError("geometry frames differ: " + std::string(to_string(a)) + " vs " +
                         std::string(to_string(b)));
    }
}

} // namespace

double intersection_area_general(const Polygon& p, const Polygon& q) {
    require_same_frame(p.frame(), q.frame());
    const Box2 pb = box_of(p.vertices());
    const Box2 qb = box_of(q.vertices());
    if (!boxes_overlap(pb, qb)) return 0.0;

    // The indicator of a simple polygon is the signed sum of the indicators of
    // its fan triangles, so the intersection area is the signed sum of
    // pairwise triangle intersections.
    const Point origin{std::min(pb.xmin, qb.xmin), std::min(pb.ymin, qb.ymin)};
    const auto pf = fan(p.vertices(), origin);
    const auto qf = fan(q.vertices(), origin);
    double total = 0.0;
    for (const auto& a : pf) {
        for (const auto& b : qf) {
            if (!boxes_overlap(a.box, b.box)) continue;
            total +=
                a.sign * b.sign *
                convex_intersection_area(std::vector<Point>(a.tri.begin(), a.tri.end()), b.tri);
        }
    }
    // Signed pieces cancel up to rounding; snap the residue.
    const double cap = std::min(polygon_area(p), polygon_area(q));
    if (total <= 1e-12 * cap) return 0.0;
    return std::min(total, cap);
}

double intersection_area_rectilinear(const Polygon& p, const Polygon& q) {
    require_same_frame(p.frame(), q.frame());
    if (!p.rectilinear() || !q.rectilinear()) {
        throw PlumbingError("rectilinear intersection requires axis-parallel polygons");
    }
    const Box2 pb = box_of(p.vertices());
    const Box2 qb = box_of(q.vertices());
    if (!boxes_overlap(pb, qb)) return 0.0;

    const double lo = std::max(pb.ymin, qb.ymin);
    const double hi = std::min(pb.ymax, qb.ymax);
    std::vector<double> ys{lo, hi};
    for (const auto* ring : {&p.vertices(), &q.vertices()}) {
        for (const auto& v : *ring) {
            if (v.y > lo && v.y < hi) ys.push_back(v.y);
        }
    }
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

    double total = 0.0;
    std::vector<double> px, qx;
    for (std::size_t k = 0; k + 1 < ys.size(); ++k) {
        const double ym = 0.5 * (ys[k] + ys[k + 1]);
        slab_intervals(p.vertices(), ym, px);
        slab_intervals(q.vertices(), ym, qx);
        total += overlap_length(px, qx) * (ys[k + 1] - ys[k]);
    }
    return total;
}

double intersection_area(const Polygon& p, const Polygon& q) {
    if (p.rectilinear() && q.rectilinear()) return intersection_area_rectilinear(p, q);
    return intersection_area_general(p, q);
}

double polygon_iou(const Polygon& p, const Polygon& q) {
    const double inter = intersection_area(p, q);
    if (inter <= 0.0) return 0.0;
    const double uni = polygon_area(p) + polygon_area(q) - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double bbox_iou(const BBox& a, const BBox& b) {
    require_same_frame(a.frame, b.frame);
    const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, NmsMode mode) {
    if (dets.empty()) return dets;
    const Frame frame = dets.front().frame();
    for (const auto& d : dets) require_same_frame(frame, d.frame());
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
        throw ConfigError("NMS IOU threshold must be in [0,1]");
    }

    std::sort(dets.begin(), dets.end(), ranks_before);
    std::vector<Detection> kept;
    std::vector<double> kept_area;
    for (auto& d : dets) {
        bool suppressed = false;
        const double area = polygon_area(d.polygon);
        for (std::size_t k = 0; k < kept.size() && !suppressed; ++k) {
            const auto& other = kept[k];
            if (bbox_iou(d.bbox, other.bbox) == 0.0) continue;
            double iou;
            if (mode == NmsMode::bbox) {
                iou = bbox_iou(d.bbox, other.bbox);
            } else {
                const double inter = intersection_area(d.polygon, other.polygon);
                iou = inter <= 0.0 ? 0.0 : inter / (area + kept_area[k] - inter);
            }
            suppressed = iou > iou_threshold;
        }
        if (!suppressed) {
            kept_area.push_back(area);
            kept.push_back(std::move(d));
        }
    }
    return kept;
}

} // namespace canopy
