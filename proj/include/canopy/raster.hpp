#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace canopy {

/// Six-coefficient map from pixel (col,row) to world (x,y):
///   x = a*col + b*row + c
///   y = d*col + e*row + f
/// Integer (col,row) addresses a pixel's top-left corner.
struct AffineGeoTransform {
    double a = 1.0, b = 0.0, c = 0.0;
    double d = 0.0, e = 1.0, f = 0.0;

    double determinant() const { return a * e - b * d; }
    bool invertible() const;

    bool operator==(const AffineGeoTransform&) const = default;
};

struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
};

struct PixelPoint {
    double col = 0.0;
    double row = 0.0;
};

WorldPoint pixel_to_world(const AffineGeoTransform& t, double col, double row);

/// Throws DegenerateTransformError when `t` is singular.
PixelPoint world_to_pixel(const AffineGeoTransform& t, double x, double y);

/// Geo-referencing carried by a raster. The CRS is an opaque identifier;
/// nothing is ever reprojected.
struct GeoReference {
    AffineGeoTransform transform;
    std::string crs_id;

    bool operator==(const GeoReference&) const = default;
};

struct PixelWindow {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;

    bool operator==(const PixelWindow&) const = default;
};

/// 8-bit, row-major, channel-interleaved pixel grid. Immutable once built.
class RasterImage {
  public:
    RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data,
                std::optional<GeoReference> geo = std::nullopt);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::span<const std::uint8_t> data() const { return data_; }
    const std::optional<GeoReference>& geo() const { return geo_; }

    std::uint8_t at(int col, int row, int channel) const {
        return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + channel];
    }

    /// 0.299R + 0.587G + 0.114B; single-channel rasters return the sample.
    double luminance(int col, int row) const;

    RasterImage with_geo(std::optional<GeoReference> geo) const;

    bool operator==(const RasterImage&) const = default;

  private:
    int width_;
    int height_;
    int channels_;
    std::vector<std::uint8_t> data_;
    std::optional<GeoReference> geo_;
};

/// Copies `window` out of `raster`. The geo transform is shifted so that the
/// result's pixel (0,0) lands on the parent's (x0,y0). Throws BoundsError.
RasterImage read_window(const RasterImage& raster, const PixelWindow& window);

// ---------------------------------------------------------------------------
// Codecs
// ---------------------------------------------------------------------------

RasterImage read_png(const std::filesystem::path& path);
void write_png(const RasterImage& raster, const std::filesystem::path& path);

/// Baseline TIFF reader: 8-bit samples, 1 or 3 channels, chunky layout,
/// strips or tiles, uncompressed or deflate. GeoTIFF pixel-scale/tiepoint or
/// model-transformation tags populate the geo reference; a projected or
/// geographic CRS code becomes "EPSG:<code>".
RasterImage read_tiff(const std::filesystem::path& path);

/// World file: six decimal lines in the order a, d, b, e, c, f.
AffineGeoTransform read_world_file(const std::filesystem::path& path);
void write_world_file(const AffineGeoTransform& t, const std::filesystem::path& path);

/// Dispatches on extension (.png, .tif, .tiff). A sidecar `<stem>.wld` or
/// `<image>.wld` overrides any embedded transform; `<image>.crs` (one line) supplies the
/// CRS identifier when the image has none.
RasterImage load_raster(const std::filesystem::path& path);

} // namespace canopy
