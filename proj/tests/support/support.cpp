#include "support.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <tuple>

namespace canopy::test {

namespace fs = std::filesystem;

fs::path data_dir() { return fs::path(CANOPY_TEST_SOURCE_DIR) / "data"; }
fs::path golden_dir() { return fs::path(CANOPY_TEST_SOURCE_DIR) / "golden"; }

TempDir::TempDir() {
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto p = fs::temp_directory_path() / ("canopy-test-" + std::to_string(rd()));
        if (fs::create_directory(p)) {
            path_ = p;
            return;
        }
    }
    throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

// ---------------------------------------------------------------------------
// TIFF writer
// ---------------------------------------------------------------------------

namespace {

class ByteWriter {
  public:
    explicit ByteWriter(bool big) : big_(big) {}

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        if (big_) {
            u8(v >> 8);
            u8(v & 0xff);
        } else {
            u8(v & 0xff);
            u8(v >> 8);
        }
    }
    void u32(std::uint32_t v) {
        if (big_) {
            u16(v >> 16);
            u16(v & 0xffff);
        } else {
            u16(v & 0xffff);
            u16(v >> 16);
        }
    }
    void f64(double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        if (big_) {
            u32(static_cast<std::uint32_t>(bits >> 32));
            u32(static_cast<std::uint32_t>(bits));
        } else {
            u32(static_cast<std::uint32_t>(bits));
            u32(static_cast<std::uint32_t>(bits >> 32));
        }
    }
    void align() {
        if (bytes.size() % 2) u8(0);
    }

    std::vector<std::uint8_t> bytes;

  private:
    bool big_;
};

struct Entry {
    std::uint16_t tag;
    std::uint16_t type; // 3 short, 4 long, 12 double
    std::vector<double> values;
};

std::vector<std::uint8_t> deflate_bytes(const std::vector<std::uint8_t>& in) {
    uLongf size = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(size);
    if (compress(out.data(), &size, in.data(), static_cast<uLong>(in.size())) != Z_OK) {
        throw std::runtime_error("zlib compress failed");
    }
    out.resize(size);
    return out;
}

} // namespace

void write_tiff(const RasterImage& raster, const fs::path& path, const TiffOptions& opt) {
    const int w = raster.width();
    const int h = raster.height();
    const int src_ch = raster.channels();
    const int ch = src_ch + (opt.alpha ? 1 : 0);
    auto sample = [&](int x, int y, int c) -> std::uint8_t {
        return c < src_ch ? raster.at(x, y, c) : 255;
    };

    // Chunks: rectangles of (x0, y0, cw, ch) per plane.
    struct Chunk {
        int x0, y0, cw, chh, plane;
    };
    std::vector<Chunk> chunks;
    const int planes = opt.planar ? ch : 1;
    for (int plane = 0; plane < planes; ++plane) {
        if (opt.tile_size > 0) {
            for (int ty = 0; ty < h; ty += opt.tile_size) {
                for (int tx = 0; tx < w; tx += opt.tile_size) {
                    chunks.push_back({tx, ty, opt.tile_size, opt.tile_size, plane});
                }
            }
        } else {
            const int rps = opt.rows_per_strip > 0 ? opt.rows_per_strip : h;
            for (int y = 0; y < h; y += rps) {
                chunks.push_back({0, y, w, std::min(rps, h - y), plane});
            }
        }
    }

    std::vector<std::vector<std::uint8_t>> payloads;
    for (const auto& c : chunks) {
        const int per_px = opt.planar ? 1 : ch;
        std::vector<std::uint8_t> raw;
        for (int y = c.y0; y < c.y0 + c.chh; ++y) {
            std::vector<std::uint8_t> row;
            for (int x = c.x0; x < c.x0 + c.cw; ++x) {
                for (int s = 0; s < per_px; ++s) {
                    const int channel = opt.planar ? c.plane : s;
                    // Tiles past the image edge are padded with zeros.
                    row.push_back(x < w && y < h ? sample(x, y, channel) : 0);
                }
            }
            if (opt.horizontal_predictor) {
                for (std::size_t i = row.size(); i-- > static_cast<std::size_t>(per_px);) {
                    row[i] = static_cast<std::uint8_t>(row[i] - row[i - per_px]);
                }
            }
            raw.insert(raw.end(), row.begin(), row.end());
        }
        payloads.push_back(opt.deflate ? deflate_bytes(raw) : raw);
    }

    std::vector<Entry> entries;
    auto add = [&](std::uint16_t tag, std::uint16_t type, std::vector<double> v) {
        entries.push_back({tag, type, std::move(v)});
    };
    add(256, 4, {double(w)});
    add(257, 4, {double(h)});
    add(258, 3, std::vector<double>(ch, 8.0));
    add(259, 3, {opt.deflate ? 8.0 : 1.0});
    add(262, 3, {ch >= 3 ? 2.0 : 1.0});
    add(277, 3, {double(ch)});
    add(284, 3, {opt.planar ? 2.0 : 1.0});
    if (opt.alpha) add(338, 3, {2.0});
    if (opt.horizontal_predictor) add(317, 3, {2.0});
    if (opt.tile_size > 0) {
        add(322, 4, {double(opt.tile_size)});
        add(323, 4, {double(opt.tile_size)});
    } else {
        add(278, 4, {double(opt.rows_per_strip > 0 ? opt.rows_per_strip : h)});
    }
    std::vector<double> counts;
    for (const auto& p : payloads) counts.push_back(double(p.size()));
    const std::uint16_t offsets_tag = opt.tile_size > 0 ? 324 : 273;
    const std::uint16_t counts_tag = opt.tile_size > 0 ? 325 : 279;
    add(offsets_tag, 4, std::vector<double>(payloads.size(), 0.0)); // patched below
    add(counts_tag, 4, counts);

    if (opt.geo && raster.geo()) {
        const auto& t = raster.geo()->transform;
        // PixelIsPoint tags describe the transform at pixel centres.
        const double shift = opt.pixel_is_point ? 0.5 : 0.0;
        const double c = t.c + shift * t.a + shift * t.b;
        const double f = t.f + shift * t.d + shift * t.e;
        if (opt.model_transformation) {
            add(34264, 12, {t.a, t.b, 0, c, t.d, t.e, 0, f, 0, 0, 0, 0, 0, 0, 0, 1});
        } else {
            add(33550, 12, {t.a, -t.e, 0.0});
            add(33922, 12, {0, 0, 0, c, f, 0});
        }
        std::vector<double> keys = {1, 1, 0, 0};
        auto key = [&](double id, double value) {
            keys.insert(keys.end(), {id, 0, 1, value});
            keys[3] += 1;
        };
        key(1025, opt.pixel_is_point ? 2 : 1);
        if (opt.epsg > 0) key(3072, opt.epsg);
        add(34735, 3, keys);
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.tag < b.tag; });

    ByteWriter out(opt.big_endian);
    out.u8(opt.big_endian ? 'M' : 'I');
    out.u8(opt.big_endian ? 'M' : 'I');
    out.u16(42);
    out.u32(8);

    auto type_size = [](std::uint16_t type) { return type == 3 ? 2u : type == 4 ? 4u : 8u; };
    const std::uint32_t ifd_size = 2 + 12 * static_cast<std::uint32_t>(entries.size()) + 4;
    std::uint32_t extra_at = 8 + ifd_size;
    std::vector<std::uint32_t> extra_offset(entries.size(), 0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto bytes = type_size(entries[i].type) * entries[i].values.size();
        if (bytes > 4) {
            extra_offset[i] = extra_at;
            extra_at += static_cast<std::uint32_t>(bytes + bytes % 2);
        }
    }
    std::uint32_t data_at = extra_at;
    std::vector<double> offsets;
    for (const auto& p : payloads) {
        offsets.push_back(data_at);
        data_at += static_cast<std::uint32_t>(p.size() + p.size() % 2);
    }
    for (auto& e : entries) {
        if (e.tag == offsets_tag) e.values = offsets;
    }

    auto put = [&](const Entry& e, double v) {
        if (e.type == 3)
            out.u16(static_cast<std::uint16_t>(v));
        else if (e.type == 4)
            out.u32(static_cast<std::uint32_t>(v));
        else
            out.f64(v);
    };
    out.u16(static_cast<std::uint16_t>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        out.u16(e.tag);
        out.u16(e.type);
        out.u32(static_cast<std::uint32_t>(e.values.size()));
        if (extra_offset[i]) {
            out.u32(extra_offset[i]);
        } else {
            const auto start = out.bytes.size();
            for (double v : e.values) put(e, v);
            while (out.bytes.size() < start + 4) out.u8(0);
        }
    }
    out.u32(0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!extra_offset[i]) continue;
        for (double v : entries[i].values) put(entries[i], v);
        out.align();
    }
    for (const auto& p : payloads) {
        out.bytes.insert(out.bytes.end(), p.begin(), p.end());
        out.align();
    }

    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(out.bytes.data()),
            static_cast<std::streamsize>(out.bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Geometry oracles
// ---------------------------------------------------------------------------

bool point_in_ring(const std::vector<Point>& ring, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const auto& a = ring[i];
        const auto& b = ring[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
            inside = !inside;
        }
    }
    return inside;
}

double raster_iou(const std::vector<Point>& p, const std::vector<Point>& q, double cell) {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const auto* ring : {&p, &q}) {
        for (const auto& v : *ring) {
            x0 = std::min(x0, v.x);
            y0 = std::min(y0, v.y);
            x1 = std::max(x1, v.x);
            y1 = std::max(y1, v.y);
        }
    }
    const long nx = static_cast<long>(std::ceil((x1 - x0) / cell));
    const long ny = static_cast<long>(std::ceil((y1 - y0) / cell));
    long inter = 0, uni = 0;
    for (long j = 0; j < ny; ++j) {
        const double y = y0 + (j + 0.5) * cell;
        for (long i = 0; i < nx; ++i) {
            const double x = x0 + (i + 0.5) * cell;
            const bool a = point_in_ring(p, x, y);
            const bool b = point_in_ring(q, x, y);
            inter += a && b;
            uni += a || b;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Half-open index ranges [lo, hi) of the cell centres on one row that lie
// inside `ring`, by the same crossing rule as point_in_ring.
std::vector<std::pair<long, long>> row_ranges(const std::vector<Point>& ring, double y, double x0,
                                              double cell, long nx) {
    std::vector<double> xs;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const auto& a = ring[i];
        const auto& b = ring[j];
        if ((a.y > y) != (b.y > y)) xs.push_back((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
    }
    std::sort(xs.begin(), xs.end());
    std::vector<std::pair<long, long>> out;
    auto first_at_or_after = [&](double x) {
        const double t = std::ceil((x - x0) / cell - 0.5);
        return std::clamp(static_cast<long>(t), 0L, nx);
    };
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const long lo = first_at_or_after(xs[k]), hi = first_at_or_after(xs[k + 1]);
        if (hi > lo) out.push_back({lo, hi});
    }
    return out;
}

long range_length(const std::vector<std::pair<long, long>>& r) {
    long n = 0;
    for (const auto& [lo, hi] : r) n += hi - lo;
    return n;
}

} // namespace

double raster_iou_rows(const std::vector<Point>& p, const std::vector<Point>& q, double cell) {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const auto* ring : {&p, &q}) {
        for (const auto& v : *ring) {
            x0 = std::min(x0, v.x);
            y0 = std::min(y0, v.y);
            x1 = std::max(x1, v.x);
            y1 = std::max(y1, v.y);
        }
    }
    const long nx = static_cast<long>(std::ceil((x1 - x0) / cell));
    const long ny = static_cast<long>(std::ceil((y1 - y0) / cell));
    long inter = 0, uni = 0;
    for (long j = 0; j < ny; ++j) {
        const double y = y0 + (j + 0.5) * cell;
        const auto a = row_ranges(p, y, x0, cell, nx);
        const auto b = row_ranges(q, y, x0, cell, nx);
        long both = 0;
        for (const auto& [alo, ahi] : a) {
            for (const auto& [blo, bhi] : b)
                both += std::max(0L, std::min(ahi, bhi) - std::max(alo, blo));
        }
        inter += both;
        uni += range_length(a) + range_length(b) - both;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Point> random_convex_ring(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (;;) {
        std::vector<Point> pts(static_cast<std::size_t>(n));
        for (auto& p : pts) p = {u(rng), u(rng)};
        std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
            return std::tie(a.x, a.y) < std::tie(b.x, b.y);
        });
        auto cross = [](const Point& o, const Point& a, const Point& b) {
            return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        };
        std::vector<Point> hull(2 * pts.size());
        std::size_t k = 0;
        for (const auto& p : pts) {
            while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
            hull[k++] = p;
        }
        for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
            while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
            hull[k++] = pts[i];
        }
        hull.resize(k - 1);
        if (hull.size() >= 3) return hull;
    }
}

std::vector<Polygon> cross_hatch(int strips) {
    std::vector<Polygon> out;
    for (int i = 0; i < strips; ++i) {
        const double x = 3.0 * i;
        out.emplace_back(std::vector<Point>{{x, 0}, {x + 1, 0}, {x + 11, 10}, {x + 10, 10}},
                         Frame::image_px);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

bool disk_covers(const Disk& d, int col, int row) {
    const double dx = col + 0.5 - d.cx;
    const double dy = row + 0.5 - d.cy;
    return dx * dx + dy * dy <= d.r * d.r;
}

DiskScene make_disk_scene(int width, int height, const std::vector<Disk>& disks) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * 3, 0);
    std::vector<std::size_t> counts(disks.size(), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (std::size_t k = 0; k < disks.size(); ++k) {
                if (!disk_covers(disks[k], x, y)) continue;
                ++counts[k];
                auto* px = &data[(static_cast<std::size_t>(y) * width + x) * 3];
                px[0] = px[1] = px[2] = 255;
            }
        }
    }
    return {RasterImage(width, height, 3, std::move(data)), disks, counts};
}

DiskScene five_disk_scene() {
    return make_disk_scene(
        300, 300, {{45, 45, 28}, {150, 150, 28}, {200, 55, 28}, {100, 245, 28}, {250, 250, 28}});
}

std::vector<Detection> random_crown_detections(std::mt19937_64& rng, int count, int extent) {
    std::uniform_real_distribution<double> pos(0.0, extent);
    std::uniform_real_distribution<double> rad(4.0, 15.0);
    std::uniform_real_distribution<double> score(0.1, 1.0);
    std::vector<Detection> out;
    while (static_cast<int>(out.size()) < count) {
        const Disk d{pos(rng), pos(rng), rad(rng)};
        BinaryMask m(extent, extent);
        for (int y = 0; y < extent; ++y) {
            for (int x = 0; x < extent; ++x) {
                if (disk_covers(d, x, y)) m.set(x, y);
            }
        }
        if (m.empty()) continue;
        out.push_back(make_detection(mask_to_polygon(m, Frame::image_px), score(rng),
                                     DetectionSource::automatic_grid));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matching reference
// ---------------------------------------------------------------------------

namespace {

double box_iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
    const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
    const double inter = ix * iy;
    if (inter == 0.0) return 0.0;
    return inter /
           ((a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter);
}

} // namespace

ReferenceCounts reference_match(const std::vector<BBox>& preds, const std::vector<double>& scores,
                                const std::vector<BBox>& gts, double iou_threshold,
                                double min_score) {
    using Key = std::tuple<double, double, double, double, double, double>;
    std::vector<std::pair<Key, std::size_t>> order;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (scores[i] < min_score) continue;
        const auto& b = preds[i];
        order.push_back(
            {{-scores[i], -(b.xmax - b.xmin) * (b.ymax - b.ymin), b.xmin, b.ymin, b.xmax, b.ymax},
             i});
    }
    std::sort(order.begin(), order.end());

    ReferenceCounts rc;
    std::vector<char> used(gts.size(), 0);
    for (const auto& [key, i] : order) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = box_iou(preds[i], gts[g]);
            if (v < iou_threshold) continue;
            if (best < 0 || v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = 1;
            ++rc.tp;
        } else {
            ++rc.fp;
        }
    }
    for (char u : used) rc.fn += u ? 0 : 1;
    return rc;
}

} // namespace canopy::test
