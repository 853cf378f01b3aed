#pragma once

#include "canopy/raster.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canopy {

/// Coordinate frame a piece of geometry lives in.
enum class Frame {
    tile_px,
    image_px,
    world,
};

std::string_view to_string(Frame frame);
Frame frame_from_string(std::string_view text);

struct Point {
    double x = 0.0;
    double y = 0.0;

    auto operator<=>(const Point&) const = default;
};

// ---------------------------------------------------------------------------
// BinaryMask
// ---------------------------------------------------------------------------

class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int width, int height);
    BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

    int width() const { return width_; }
    int height() const { return height_; }
    bool get(int col, int row) const { return bits_[index(col, row)] != 0; }
    void set(int col, int row, bool on = true) { bits_[index(col, row)] = on ? 1 : 0; }
    bool in_bounds(int col, int row) const {
        return col >= 0 && row >= 0 && col < width_ && row < height_;
    }

    /// One byte per pixel (0 or 1), row-major.
    std::span<const std::uint8_t> bits() const { return bits_; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }

    bool operator==(const BinaryMask&) const = default;

  private:
    std::size_t index(int col, int row) const {
        return static_cast<std::size_t>(row) * width_ + col;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// BBox / Polygon
// ---------------------------------------------------------------------------

struct BBox {
    double xmin = 0.0;
    double ymin = 0.0;
    double xmax = 0.0;
    double ymax = 0.0;
    Frame frame = Frame::image_px;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return width() * height(); }
    bool valid() const { return xmin < xmax && ymin < ymax; }

    bool operator==(const BBox&) const = default;
};

/// Simple polygon with implicit closure. Construction validates (>= 3 distinct
/// vertices, positive area, no crossing edges), orients it counter-clockwise
/// (positive shoelace sum) and rotates the ring to start at the vertex with
/// the smallest (y, x), so equal shapes compare equal.
///
/// Rings that touch themselves at a vertex are accepted; tracing an
/// 8-connected mask produces those where pixels meet diagonally.
class Polygon {
  public:
    Polygon(std::vector<Point> vertices, Frame frame);

    const std::vector<Point>& vertices() const { return vertices_; }
    Frame frame() const { return frame_; }
    std::size_t size() const { return vertices_.size(); }

    /// True when every edge is axis-parallel.
    bool rectilinear() const { return rectilinear_; }

    bool operator==(const Polygon&) const = default;

  private:
    std::vector<Point> vertices_;
    Frame frame_;
    bool rectilinear_ = false;
};

/// Polygon from an axis-aligned box, in the box's frame.
Polygon box_polygon(const BBox& box);

double polygon_area(const Polygon& p);
BBox polygon_bbox(const Polygon& p);
Polygon translate(const Polygon& p, double dx, double dy, Frame frame);
Polygon transform(const Polygon& p, const AffineGeoTransform& t, Frame frame);

/// Signed shoelace area of an open ring.
double signed_area(std::span<const Point> ring);

/// No two non-adjacent edges cross or overlap; touching at a vertex is allowed.
bool is_simple(std::span<const Point> ring);

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

enum class DetectionSource {
    automatic_grid,
    bbox_prompted,
    external_detector,
};

std::string_view to_string(DetectionSource source);
DetectionSource source_from_string(std::string_view text);

struct Detection {
    Polygon polygon;
    BBox bbox;
    double score = 0.0;
    DetectionSource source = DetectionSource::automatic_grid;
    std::optional<int> tile_index;
    std::optional<int> prompt_index;
    /// Unrecognised feature properties, kept as raw JSON text.
    std::map<std::string, std::string> extra;

    Frame frame() const { return polygon.frame(); }

    bool operator==(const Detection&) const = default;
};

/// Builds a detection whose bbox is the polygon's hull. Throws ConfigError if
/// the score is outside [0,1].
Detection make_detection(Polygon polygon, double score, DetectionSource source,
                         std::optional<int> tile_index = std::nullopt);

/// Detection covering a box (external detectors and ground truth).
Detection make_box_detection(const BBox& box, double score, DetectionSource source);

/// Total order used for every tie-break: score desc, polygon area desc, then
/// canonical geometry (bbox, vertex list) and the remaining fields.
bool ranks_before(const Detection& a, const Detection& b);

// ---------------------------------------------------------------------------
// Mask post-processing
// ---------------------------------------------------------------------------

/// Keeps the largest 8-connected foreground component. Ties go to the
/// component whose first pixel comes first in row-major order.
BinaryMask largest_component(const BinaryMask& mask);

/// Traces the outer boundary of the mask's largest component along pixel
/// edges. Holes are dropped and collinear vertices merged. Throws
/// EmptyGeometryError for an empty mask.
Polygon mask_to_polygon(const BinaryMask& mask, Frame frame = Frame::tile_px);

/// Pixel-edge hull: a pixel at col c spans [c, c+1). Throws EmptyGeometryError.
BBox bbox_from_mask(const BinaryMask& mask, Frame frame = Frame::tile_px);

// ---------------------------------------------------------------------------
// Overlap and suppression
// ---------------------------------------------------------------------------

/// Area of p ∩ q. Both polygons must share a frame (FrameError otherwise).
double intersection_area(const Polygon& p, const Polygon& q);

/// Intersection area by signed-triangle decomposition; valid for any simple
/// polygons.
double intersection_area_general(const Polygon& p, const Polygon& q);

/// Intersection area by horizontal slab decomposition; both polygons must be
/// rectilinear.
double intersection_area_rectilinear(const Polygon& p, const Polygon& q);

double polygon_iou(const Polygon& p, const Polygon& q);
double bbox_iou(const BBox& a, const BBox& b);

enum class NmsMode {
    polygon,
    bbox,
};

std::string_view to_string(NmsMode mode);
NmsMode nms_mode_from_string(std::string_view text);

/// Greedy suppression in `ranks_before` order: a detection is dropped when its
/// IOU with an already kept one is strictly greater than `iou_threshold`.
/// Output is in kept order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, NmsMode mode);

} // namespace canopy
