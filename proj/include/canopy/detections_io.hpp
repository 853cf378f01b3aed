#pragma once

#include "canopy/detection_set.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace canopy {

/// GeoJSON FeatureCollection with foreign members `frame`, `image_id`,
/// `crs_id`, `geotransform` and `provenance`. Features are written in
/// canonical order with a fixed key order; scores carry 9 significant digits
/// and coordinates the shortest round-trip form, so equal sets give equal
/// bytes.
std::string format_detections(const DetectionSet& set);
void write_detections(const DetectionSet& set, const std::filesystem::path& path);

/// Inverse of `format_detections`. Unknown feature properties are kept in
/// `Detection::extra`. Throws ParseError naming the byte offset or feature.
DetectionSet parse_detections(const std::string& text);
DetectionSet read_detections(const std::filesystem::path& path);

/// Box CSV keyed by image: header must name xmin, ymin, xmax, ymax and one of
/// image_id / image_path; `score` is optional (1.0 when absent). Extra
/// columns such as `label` are ignored.
std::map<std::string, std::vector<Detection>> parse_box_csv(const std::string& text);
std::map<std::string, std::vector<Detection>> read_box_csv(const std::filesystem::path& path);

/// `image_id,xmin,ymin,xmax,ymax,score`, one row per detection bbox.
std::string format_box_csv(const std::vector<DetectionSet>& sets);

/// Whole-file read; IoError when missing.
std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename.
void write_text_file_atomic(const std::filesystem::path& path, const std::string& text);

} // namespace canopy
