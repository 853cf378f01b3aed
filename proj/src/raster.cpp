#include "canopy/raster.hpp"

#include "canopy/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace canopy {

bool AffineGeoTransform::invertible() const {
    const double det = determinant();
    if (!std::isfinite(det) || det == 0.0) return false;
    // Relative to the linear part's scale so tiny ground-sample distances are fine.
    const double scale = std::max({std::abs(a), std::abs(b), std::abs(d), std::abs(e)});
    return std::abs(det) > 1e-14 * scale * scale;
}

WorldPoint pixel_to_world(const AffineGeoTransform& t, double col, double row) {
    return {t.a * col + t.b * row + t.c, t.d * col + t.e * row + t.f};
}

PixelPoint world_to_pixel(const AffineGeoTransform& t, double x, double y) {
    if (!t.invertible()) {
        throw DegenerateTransformError("affine transform is not invertible (determinant " +
                                       std::to_string(t.determinant()) + ")");
    }
    const double det = t.determinant();
    const double dx = x - t.c;
    const double dy = y - t.f;
    return {(t.e * dx - t.b * dy) / det, (t.a * dy - t.d * dx) / det};
}

RasterImage::RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data,
                         std::optional<GeoReference> geo)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)),
      geo_(std::move(geo)) {
    if (width < 1 || height < 1 || channels < 1) {
        throw ConfigError("raster dimensions must be positive, got " + std::to_string(width) + "x" +
                          std::to_string(height) + "x" + std::to_string(channels));
    }
    const auto expected = static_cast<std::size_t>(width) * height * channels;
    if (data_.size() != expected) {
        throw ConfigError("raster data has " + std::to_string(data_.size()) +
                          " samples, expected " + std::to_string(expected));
    }
}

double RasterImage::luminance(int col, int row) const {
    if (channels_ < 3) return at(col, row, 0);
    return 0.299 * at(col, row, 0) + 0.587 * at(col, row, 1) + 0.114 * at(col, row, 2);
}

RasterImage RasterImage::with_geo(std::optional<GeoReference> geo) const {
    return RasterImage(width_, height_, channels_, data_, std::move(geo));
}

RasterImage read_window(const RasterImage& raster, const PixelWindow& w) {
    if (w.x0 < 0 || w.y0 < 0 || w.width < 1 || w.height < 1 || w.x0 + w.width > raster.width() ||
        w.y0 + w.height > raster.height()) {
        std::ostringstream msg;
        msg << "window (" << w.x0 << "," << w.y0 << "," << w.width << "," << w.height
            << ") outside " << raster.width() << "x" << raster.height() << " raster";
        throw BoundsError(msg.str());
    }
    const int ch = raster.channels();
    const auto src = raster.data();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w.width) * w.height * ch);
    const auto row_bytes = static_cast<std::size_t>(w.width) * ch;
    for (int r = 0; r < w.height; ++r) {
        const auto from = (static_cast<std::size_t>(w.y0 + r) * raster.width() + w.x0) * ch;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from), row_bytes,
                    out.begin() + static_cast<std::ptrdiff_t>(r * row_bytes));
    }

    std::optional<GeoReference> geo;
    if (raster.geo()) {
        geo = *raster.geo();
        const auto origin = pixel_to_world(geo->transform, w.x0, w.y0);
        geo->transform.c = origin.x;
        geo->transform.f = origin.y;
    }
    return RasterImage(w.width, w.height, ch, std::move(out), std::move(geo));
}

namespace {

std::string read_first_line(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    return line;
}

} // namespace

// World files give (c, f) at the centre of the top-left pixel; internally the
// transform addresses pixel corners.
AffineGeoTransform read_world_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open world file: " + path.string());
    double v[6];
    for (int i = 0; i < 6; ++i) {
        std::string line;
        if (!std::getline(in, line)) {
            throw ParseError("world file " + path.string() + " has fewer than 6 lines");
        }
        try {
            std::size_t used = 0;
            v[i] = std::stod(line, &used);
        } catch (const std::exception&) {
            throw ParseError("world file " + path.string() + " line " + std::to_string(i + 1) +
                             " is not a number: '" + line + "'");
        }
    }
    AffineGeoTransform t;
    t.a = v[0];
    t.d = v[1];
    t.b = v[2];
    t.e = v[3];
    t.c = v[4] - 0.5 * t.a - 0.5 * t.b;
    t.f = v[5] - 0.5 * t.d - 0.5 * t.e;
    return t;
}

void write_world_file(const AffineGeoTransform& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write world file: " + path.string());
    out.precision(17);
    const auto centre = pixel_to_world(t, 0.5, 0.5);
    out << t.a << '\n'
        << t.d << '\n'
        << t.b << '\n'
        << t.e << '\n'
        << centre.x << '\n'
        << centre.y << '\n';
}

RasterImage load_raster(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));

    RasterImage raster = [&] {
        if (ext == ".png") return read_png(path);
        if (ext == ".tif" || ext == ".tiff") return read_tiff(path);
        throw IoError("unsupported image format '" + ext + "': " + path.string());
    }();

    auto geo = raster.geo();
    auto sidecar = path;
    sidecar.replace_extension(".wld");
    if (!std::filesystem::exists(sidecar)) sidecar = path.string() + ".wld";
    if (std::filesystem::exists(sidecar)) {
        if (!geo) geo = GeoReference{};
        geo->transform = read_world_file(sidecar);
    }
    auto crs_file = path;
    crs_file.replace_extension(".crs");
    if (geo && geo->crs_id.empty() && std::filesystem::exists(crs_file)) {
        geo->crs_id = read_first_line(crs_file);
    }
    if (geo && !geo->transform.invertible()) {
        throw DegenerateTransformError("geo transform of " + path.string() + " is singular");
    }
    return raster.with_geo(std::move(geo));
}

} // namespace canopy
