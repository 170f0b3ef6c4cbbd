#pragma once

#include <string>
#include <vector>

#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

enum class GeometryKind { line, polygon };

// A typed vector feature. Lines are buffered to `width_px` raster pixels
// before rasterization; polygons are closed implicitly.
struct Geometry {
  ConstraintChannel channel = ConstraintChannel::major_road;
  GeometryKind kind = GeometryKind::line;
  std::vector<LonLat> points;
  double width_px = 1.0;
};

struct FeatureError {
  std::size_t index = 0;
  std::string reason;
};

struct RasterizeResult {
  Grid<std::uint8_t> mask;  // H x W x kConstraintChannels
  std::vector<FeatureError> errors;
};

// Maps geodetic coordinates onto continuous pixel space: x to the east,
// y to the south, pixel (r, c) covering [c, c+1) x [r, r+1).
class PixelTransform {
 public:
  PixelTransform(const GeoBox& bbox, Resolution res);
  double to_x(double lon) const { return (lon - bbox_.min_lon) * sx_; }
  double to_y(double lat) const { return (bbox_.max_lat - lat) * sy_; }
  double to_lon(double x) const { return bbox_.min_lon + x / sx_; }
  double to_lat(double y) const { return bbox_.max_lat - y / sy_; }

 private:
  GeoBox bbox_;
  double sx_;
  double sy_;
};

// A pixel is set when its centre lies inside the feature footprint
// (polygon interior, or the line buffered by half its raster width), using
// the half-open crossing rule so shared edges are never double counted.
// Features outside the bbox are clipped; invalid features are skipped and
// reported in `errors`.
RasterizeResult rasterize_constraints(const std::vector<Geometry>& features, const GeoBox& bbox,
                                      Resolution res);

// Axis-aligned outline of a mask: one rectangle polygon per horizontal run
// of set pixels. rasterize_constraints(vectorize_mask(m)) == m.
std::vector<Geometry> vectorize_mask(const Grid<std::uint8_t>& mask, const GeoBox& bbox);

}  // namespace sense::tiles
