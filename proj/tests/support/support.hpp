#pragma once

#include "canopy/geometry.hpp"
#include "canopy/raster.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace canopy::test {

std::filesystem::path data_dir();
std::filesystem::path golden_dir();

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// TIFF writer
// ---------------------------------------------------------------------------

struct TiffOptions {
    bool big_endian = false;
    bool deflate = false;
    bool horizontal_predictor = false;
    bool planar = false;    ///< PlanarConfiguration 2
    int rows_per_strip = 0; ///< 0: one strip
    int tile_size = 0;      ///< > 0 writes tiles instead of strips
    bool alpha = false;     ///< add an opaque fourth sample
    /// Geo tags: pixel scale + tiepoint (or model transformation), EPSG code.
    bool geo = false;
    bool model_transformation = false;
    bool pixel_is_point = false;
    int epsg = 0;
};

/// Writes `raster` (1 or 3 channels) as a baseline TIFF. The raster's geo
/// transform must be north-up when `geo` uses pixel scale + tiepoint.
void write_tiff(const RasterImage& raster, const std::filesystem::path& path,
                const TiffOptions& options = {});

// ---------------------------------------------------------------------------
// Geometry oracles
// ---------------------------------------------------------------------------

/// Even-odd point-in-polygon test.
bool point_in_ring(const std::vector<Point>& ring, double x, double y);

/// IOU by counting cells of side `cell` whose centres fall inside each ring.
double raster_iou(const std::vector<Point>& p, const std::vector<Point>& q, double cell = 0.05);

/// Same cells as raster_iou, counted a row at a time from edge crossings.
double raster_iou_rows(const std::vector<Point>& p, const std::vector<Point>& q,
                       double cell = 0.05);

/// Convex hull (monotone chain) of `n` uniform points in [lo, hi]^2.
std::vector<Point> random_convex_ring(std::mt19937_64& rng, int n, double lo, double hi);

/// Thin parallel diagonal strips, pairwise disjoint, with heavily overlapping
/// bounding boxes.
std::vector<Polygon> cross_hatch(int strips);

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct Disk {
    double cx;
    double cy;
    double r;
};

/// A pixel belongs to a disk when its centre lies within r of (cx, cy).
bool disk_covers(const Disk& d, int col, int row);

struct DiskScene {
    RasterImage image;
    std::vector<Disk> disks;
    std::vector<std::size_t> pixel_counts; ///< foreground pixels per disk
};

/// White disks on black, RGB.
DiskScene make_disk_scene(int width, int height, const std::vector<Disk>& disks);

/// The fixed 300x300 five-disk scene. Two disks straddle the seams of a
/// 200/60 tiling, one sits in the overlap of all four tiles.
DiskScene five_disk_scene();

/// Mask-traced disk crowns with uniform scores in [0.1, 1].
std::vector<Detection> random_crown_detections(std::mt19937_64& rng, int count, int extent);

// ---------------------------------------------------------------------------
// Matching reference
// ---------------------------------------------------------------------------

struct ReferenceCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

/// Greedy matcher written against plain boxes: predictions sorted by
/// (-score, -area, xmin, ymin, xmax, ymax), each scanning every ground-truth
/// box for the best IOU.
ReferenceCounts reference_match(const std::vector<BBox>& preds, const std::vector<double>& scores,
                                const std::vector<BBox>& gts, double iou_threshold,
                                double min_score);

} // namespace canopy::test
