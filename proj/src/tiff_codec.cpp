#include "canopy/error.hpp"
#include "canopy/raster.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace canopy {

namespace {

enum Tag : std::uint16_t {
    image_width = 256,
    image_length = 257,
    bits_per_sample = 258,
    compression = 259,
    strip_offsets = 273,
    samples_per_pixel = 277,
    rows_per_strip = 278,
    strip_byte_counts = 279,
    planar_configuration = 284,
    predictor = 317,
    tile_width = 322,
    tile_length = 323,
    tile_offsets = 324,
    tile_byte_counts = 325,
    sample_format = 339,
    model_pixel_scale = 33550,
    model_tiepoint = 33922,
    model_transformation = 34264,
    geo_key_directory = 34735,
};

constexpr std::uint16_t compression_none = 1;
constexpr std::uint16_t compression_adobe_deflate = 8;
constexpr std::uint16_t compression_deflate = 32946;

class TiffReader {
  public:
    TiffReader(std::vector<std::uint8_t> bytes, std::string name)
        : bytes_(std::move(bytes)), name_(std::move(name)) {}

    RasterImage read();

  private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("TIFF " + name_ + ": " + what);
    }

    void need(std::size_t offset, std::size_t size) const {
        if (offset > bytes_.size() || size > bytes_.size() - offset) {
            fail("truncated at byte offset " + std::to_string(offset));
        }
    }

    std::uint16_t u16(std::size_t off) const {
        need(off, 2);
        const auto* p = &bytes_[off];
        return little_ ? static_cast<std::uint16_t>(p[0] | p[1] << 8)
                       : static_cast<std::uint16_t>(p[1] | p[0] << 8);
    }

    std::uint32_t u32(std::size_t off) const {
        need(off, 4);
        const auto* p = &bytes_[off];
        return little_ ? (std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
                          std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24)
                       : (std::uint32_t{p[3]} | std::uint32_t{p[2]} << 8 |
                          std::uint32_t{p[1]} << 16 | std::uint32_t{p[0]} << 24);
    }

    double f64(std::size_t off) const {
        need(off, 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            const std::uint64_t byte = bytes_[off + (little_ ? i : 7 - i)];
            bits |= byte << (8 * i);
        }
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    struct Entry {
        std::uint16_t type = 0;
        std::uint32_t count = 0;
        std::size_t value_offset = 0;
    };

    static std::size_t type_size(std::uint16_t type) {
        switch (type) {
        case 1:
        case 2:
        case 6:
        case 7: return 1;
        case 3:
        case 8: return 2;
        case 4:
        case 9:
        case 11: return 4;
        case 5:
        case 10:
        case 12: return 8;
        default: return 0;
        }
    }

    std::vector<double> values(std::uint16_t tag) const {
        const auto it = entries_.find(tag);
        if (it == entries_.end()) return {};
        const Entry& e = it->second;
        const std::size_t size = type_size(e.type);
        std::vector<double> out;
        out.reserve(e.count);
        for (std::uint32_t i = 0; i < e.count; ++i) {
            const std::size_t off = e.value_offset + i * size;
            switch (e.type) {
            case 1:
            case 7:
                need(off, 1);
                out.push_back(bytes_[off]);
                break;
            case 3: out.push_back(u16(off)); break;
            case 4: out.push_back(u32(off)); break;
            case 5: out.push_back(static_cast<double>(u32(off)) / u32(off + 4)); break;
            case 12: out.push_back(f64(off)); break;
            default:
                fail("unsupported field type " + std::to_string(e.type) + " for tag " +
                     std::to_string(tag));
            }
        }
        return out;
    }

    double scalar(std::uint16_t tag, std::optional<double> fallback = std::nullopt) const {
        const auto v = values(tag);
        if (v.empty()) {
            if (fallback) return *fallback;
            fail("missing required tag " + std::to_string(tag));
        }
        return v.front();
    }

    std::vector<std::uint8_t> inflate_block(std::size_t offset, std::size_t size,
                                            std::size_t expected) const;
    std::optional<GeoReference> geo_reference() const;

    std::vector<std::uint8_t> bytes_;
    std::string name_;
    bool little_ = true;
    std::map<std::uint16_t, Entry> entries_;
};

std::vector<std::uint8_t> TiffReader::inflate_block(std::size_t offset, std::size_t size,
                                                    std::size_t expected) const {
    need(offset, size);
    std::vector<std::uint8_t> out(expected);
    uLongf out_len = static_cast<uLongf>(expected);
    const int rc = uncompress(out.data(), &out_len, &bytes_[offset], static_cast<uLong>(size));
    // A final strip may legitimately decode shorter than a full block.
    if (rc != Z_OK && rc != Z_BUF_ERROR) fail("deflate error " + std::to_string(rc));
    out.resize(out_len);
    return out;
}

std::optional<GeoReference> TiffReader::geo_reference() const {
    const auto matrix = values(model_transformation);
    const auto scale = values(model_pixel_scale);
    const auto tie = values(model_tiepoint);

    std::optional<GeoReference> geo;
    if (matrix.size() >= 16) {
        geo = GeoReference{};
        geo->transform = {matrix[0], matrix[1], matrix[3], matrix[4], matrix[5], matrix[7]};
    } else if (scale.size() >= 2 && tie.size() >= 6) {
        geo = GeoReference{};
        auto& t = geo->transform;
        t.a = scale[0];
        t.b = 0.0;
        t.c = tie[3] - tie[0] * scale[0];
        t.d = 0.0;
        t.e = -scale[1];
        t.f = tie[4] + tie[1] * scale[1];
    }
    if (!geo) return geo;

    const auto keys = values(geo_key_directory);
    if (keys.size() >= 4) {
        const auto n = static_cast<std::size_t>(keys[3]);
        for (std::size_t i = 0; i < n && 4 + 4 * i + 3 < keys.size(); ++i) {
            const auto id = static_cast<int>(keys[4 + 4 * i]);
            const auto location = static_cast<int>(keys[4 + 4 * i + 1]);
            const auto value = static_cast<int>(keys[4 + 4 * i + 3]);
            if (location != 0) continue;
            if (id == 1025 && value == 2) {
                // PixelIsPoint: tiepoints reference pixel centres.
                auto& t = geo->transform;
                t.c -= 0.5 * (t.a + t.b);
                t.f -= 0.5 * (t.d + t.e);
            } else if ((id == 3072 || (id == 2048 && geo->crs_id.empty())) && value > 0 &&
                       value != 32767) {
                geo->crs_id = "EPSG:" + std::to_string(value);
            }
        }
    }
    return geo;
}

RasterImage TiffReader::read() {
    need(0, 8);
    if (bytes_[0] == 'I' && bytes_[1] == 'I') {
        little_ = true;
    } else if (bytes_[0] == 'M' && bytes_[1] == 'M') {
        little_ = false;
    } else {
        fail("not a TIFF file");
    }
    if (u16(2) != 42) fail("BigTIFF and non-standard magic numbers are not supported");

    const std::size_t ifd = u32(4);
    const std::uint16_t n = u16(ifd);
    for (std::uint16_t i = 0; i < n; ++i) {
        const std::size_t off = ifd + 2 + 12 * static_cast<std::size_t>(i);
        Entry e;
        const std::uint16_t tag = u16(off);
        e.type = u16(off + 2);
        e.count = u32(off + 4);
        const std::size_t total = type_size(e.type) * e.count;
        e.value_offset = total <= 4 ? off + 8 : u32(off + 8);
        entries_[tag] = e;
    }

    const int width = static_cast<int>(scalar(image_width));
    const int height = static_cast<int>(scalar(image_length));
    const int spp = static_cast<int>(scalar(samples_per_pixel, 1));
    const auto comp = static_cast<std::uint16_t>(scalar(compression, compression_none));
    const int planar = static_cast<int>(scalar(planar_configuration, 1));
    const int pred = static_cast<int>(scalar(predictor, 1));
    const int fmt = static_cast<int>(scalar(sample_format, 1));

    for (double bits : values(bits_per_sample)) {
        if (bits != 8) fail("only 8-bit samples are supported");
    }
    if (fmt != 1) fail("only unsigned integer samples are supported");
    if (spp != 1 && spp != 3 && spp != 4) {
        fail("unsupported samples per pixel: " + std::to_string(spp));
    }
    if (comp != compression_none && comp != compression_deflate &&
        comp != compression_adobe_deflate) {
        fail("unsupported compression " + std::to_string(comp));
    }
    if (pred != 1 && pred != 2) fail("unsupported predictor " + std::to_string(pred));
    if (planar != 1 && planar != 2) fail("unsupported planar configuration");

    const bool tiled = entries_.count(tile_offsets) != 0;
    const int block_w = tiled ? static_cast<int>(scalar(tile_width)) : width;
    const int block_h = tiled ? static_cast<int>(scalar(tile_length))
                              : std::min(height, static_cast<int>(scalar(rows_per_strip, height)));
    const auto offsets = values(tiled ? tile_offsets : strip_offsets);
    const auto counts = values(tiled ? tile_byte_counts : strip_byte_counts);
    if (offsets.size() != counts.size() || offsets.empty()) fail("inconsistent strip tables");

    const int across = (width + block_w - 1) / block_w;
    const int down = (height + block_h - 1) / block_h;
    const int planes = planar == 2 ? spp : 1;
    const int block_spp = planar == 2 ? 1 : spp;
    if (offsets.size() < static_cast<std::size_t>(across) * down * planes) {
        fail("too few strips/tiles for image size");
    }

    std::vector<std::uint8_t> full(static_cast<std::size_t>(width) * height * spp);
    const std::size_t block_row_bytes = static_cast<std::size_t>(block_w) * block_spp;
    const std::size_t block_bytes = block_row_bytes * block_h;

    std::size_t index = 0;
    for (int plane = 0; plane < planes; ++plane) {
        for (int by = 0; by < down; ++by) {
            for (int bx = 0; bx < across; ++bx, ++index) {
                const auto off = static_cast<std::size_t>(offsets[index]);
                const auto cnt = static_cast<std::size_t>(counts[index]);
                std::vector<std::uint8_t> block;
                if (comp == compression_none) {
                    need(off, std::min(cnt, block_bytes));
                    const auto len = std::min({cnt, block_bytes, bytes_.size() - off});
                    block.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(off),
                                 bytes_.begin() + static_cast<std::ptrdiff_t>(off + len));
                } else {
                    block = inflate_block(off, cnt, block_bytes);
                }
                block.resize(block_bytes, 0);
                if (pred == 2) {
                    for (int r = 0; r < block_h; ++r) {
                        auto* row = block.data() + r * block_row_bytes;
                        for (std::size_t i = block_spp; i < block_row_bytes; ++i) {
                            row[i] = static_cast<std::uint8_t>(row[i] + row[i - block_spp]);
                        }
                    }
                }
                for (int r = 0; r < block_h; ++r) {
                    const int y = by * block_h + r;
                    if (y >= height) break;
                    for (int c = 0; c < block_w; ++c) {
                        const int x = bx * block_w + c;
                        if (x >= width) break;
                        for (int s = 0; s < block_spp; ++s) {
                            const int dst_s = planar == 2 ? plane : s;
                            full[(static_cast<std::size_t>(y) * width + x) * spp + dst_s] =
                                block[r * block_row_bytes +
                                      static_cast<std::size_t>(c) * block_spp + s];
                        }
                    }
                }
            }
        }
    }

    if (spp == 4) {
        std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
        for (std::size_t p = 0; p < static_cast<std::size_t>(width) * height; ++p) {
            std::copy_n(&full[p * 4], 3, &rgb[p * 3]);
        }
        full = std::move(rgb);
    }
    return RasterImage(width, height, spp == 4 ? 3 : spp, std::move(full), geo_reference());
}

} // namespace

RasterImage read_tiff(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open TIFF: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return TiffReader(std::move(bytes), path.string()).read();
}

} // namespace canopy
