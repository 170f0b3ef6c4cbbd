#include "sense/tilestore/rasterize.hpp"

#include <algorithm>
#include <cmath>

namespace sense::tiles {
namespace {

struct Vec2 {
  double x;
  double y;
};

using Ring = std::vector<Vec2>;

// Even-odd crossing test; half-open on max edges.
bool inside(const Ring& ring, double px, double py) {
  bool in = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[j];
    if ((a.y > py) != (b.y > py)) {
      double x_cross = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
      if (px < x_cross) in = !in;
    }
  }
  return in;
}

void burn(const Ring& ring, Grid<std::uint8_t>& mask, std::size_t channel) {
  double min_x = ring[0].x, max_x = ring[0].x, min_y = ring[0].y, max_y = ring[0].y;
  for (const auto& p : ring) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const auto h = static_cast<double>(mask.height());
  const auto w = static_cast<double>(mask.width());
  if (max_x < 0.0 || max_y < 0.0 || min_x > w || min_y > h) return;
  auto r0 = static_cast<std::size_t>(std::clamp(std::floor(min_y - 0.5), 0.0, h - 1));
  auto r1 = static_cast<std::size_t>(std::clamp(std::ceil(max_y), 0.0, h - 1));
  auto c0 = static_cast<std::size_t>(std::clamp(std::floor(min_x - 0.5), 0.0, w - 1));
  auto c1 = static_cast<std::size_t>(std::clamp(std::ceil(max_x), 0.0, w - 1));
  for (std::size_t r = r0; r <= r1; ++r) {
    for (std::size_t c = c0; c <= c1; ++c) {
      if (inside(ring, c + 0.5, r + 0.5)) mask.at(r, c, channel) = 1;
    }
  }
}

// Segment buffered by half_width with square caps.
Ring buffer_segment(Vec2 p, Vec2 q, double half_width) {
  double dx = q.x - p.x;
  double dy = q.y - p.y;
  double len = std::hypot(dx, dy);
  if (len == 0.0) {
    return {{p.x - half_width, p.y - half_width},
            {p.x + half_width, p.y - half_width},
            {p.x + half_width, p.y + half_width},
            {p.x - half_width, p.y + half_width}};
  }
  double ux = dx / len * half_width;
  double uy = dy / len * half_width;
  double nx = -uy;
  double ny = ux;
  Vec2 a{p.x - ux, p.y - uy};
  Vec2 b{q.x + ux, q.y + uy};
  return {{a.x + nx, a.y + ny}, {b.x + nx, b.y + ny}, {b.x - nx, b.y - ny}, {a.x - nx, a.y - ny}};
}

std::string validate(const Geometry& g) {
  for (const auto& p : g.points) {
    if (!std::isfinite(p.lon) || !std::isfinite(p.lat)) return "non-finite coordinate";
  }
  if (g.kind == GeometryKind::line) {
    if (g.points.size() < 2) return "line needs at least 2 points";
    if (!(g.width_px > 0.0) || !std::isfinite(g.width_px)) return "line width must be positive";
  } else {
    if (g.points.size() < 3) return "polygon needs at least 3 points";
  }
  if (static_cast<std::size_t>(g.channel) >= kConstraintChannels) return "unknown channel";
  return {};
}

}  // namespace

PixelTransform::PixelTransform(const GeoBox& bbox, Resolution res) : bbox_(bbox) {
  if (bbox.degenerate()) throw Error(ErrorKind::invalid_argument, "degenerate bbox");
  if (res.height == 0 || res.width == 0) throw Error(ErrorKind::invalid_argument, "empty resolution");
  sx_ = static_cast<double>(res.width) / (bbox.max_lon - bbox.min_lon);
  sy_ = static_cast<double>(res.height) / (bbox.max_lat - bbox.min_lat);
}

RasterizeResult rasterize_constraints(const std::vector<Geometry>& features, const GeoBox& bbox,
                                      Resolution res) {
  PixelTransform tf(bbox, res);
  RasterizeResult result;
  result.mask = Grid<std::uint8_t>(res.height, res.width, kConstraintChannels, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Geometry& g = features[i];
    if (auto why = validate(g); !why.empty()) {
      result.errors.push_back({i, why});
      continue;
    }
    Ring pts;
    pts.reserve(g.points.size());
    for (const auto& p : g.points) pts.push_back({tf.to_x(p.lon), tf.to_y(p.lat)});
    const auto channel = static_cast<std::size_t>(g.channel);
    if (g.kind == GeometryKind::polygon) {
      burn(pts, result.mask, channel);
    } else {
      for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        burn(buffer_segment(pts[k], pts[k + 1], g.width_px / 2.0), result.mask, channel);
      }
    }
  }
  return result;
}

std::vector<Geometry> vectorize_mask(const Grid<std::uint8_t>& mask, const GeoBox& bbox) {
  PixelTransform tf(bbox, {mask.height(), mask.width()});
  std::vector<Geometry> out;
  for (std::size_t ch = 0; ch < mask.channels(); ++ch) {
    for (std::size_t r = 0; r < mask.height(); ++r) {
      std::size_t c = 0;
      while (c < mask.width()) {
        if (!mask.at(r, c, ch)) {
          ++c;
          continue;
        }
        std::size_t start = c;
        while (c < mask.width() && mask.at(r, c, ch)) ++c;
        Geometry g;
        g.channel = static_cast<ConstraintChannel>(ch);
        g.kind = GeometryKind::polygon;
        auto x0 = static_cast<double>(start), x1 = static_cast<double>(c);
        auto y0 = static_cast<double>(r), y1 = static_cast<double>(r + 1);
        g.points = {{tf.to_lon(x0), tf.to_lat(y0)},
                    {tf.to_lon(x1), tf.to_lat(y0)},
                    {tf.to_lon(x1), tf.to_lat(y1)},
                    {tf.to_lon(x0), tf.to_lat(y1)}};
        out.push_back(std::move(g));
      }
    }
  }
  return out;
}

}  // namespace sense::tiles
