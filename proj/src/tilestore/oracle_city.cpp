#include "sense/tilestore/oracle_city.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace sense::tiles {
namespace {

using Rgb = std::array<float, 3>;

constexpr Rgb kGround{0.42f, 0.50f, 0.30f};
constexpr Rgb kRoad{0.60f, 0.60f, 0.60f};
constexpr Rgb kWater{0.05f, 0.30f, 0.28f};
constexpr Rgb kRailway{0.30f, 0.22f, 0.35f};
constexpr std::array<Rgb, kEnergyTypes> kTypeHue{{{0.95f, 0.25f, 0.20f}, {0.30f, 0.45f, 1.00f}, {0.95f, 0.90f, 0.20f}}};
constexpr std::array<float, kHeightTiers> kTierBrightness{0.50f, 0.65f, 0.82f, 1.00f};
constexpr std::array<double, kHeightTiers> kTierHeight{8.0, 18.0, 35.0, 70.0};
constexpr std::array<double, kEnergyTypes> kTypeEnergy{3.0e3, 3.0e4, 3.0e5};
constexpr std::array<double, kHeightTiers> kTierShare{0.25, 0.25, 0.25, 0.25};
constexpr std::array<double, kEnergyTypes> kTypeShare{0.33, 0.33, 0.34};

constexpr double kTileMeters = 2000.0;

struct CityStyle {
  const char* name;
  double origin_lon;
  double origin_lat;
  int min_buildings;
  int max_buildings;
};

constexpr std::array<CityStyle, 4> kCities{{
    {"New York City", -74.02, 40.70, 10, 16},
    {"Boston", -71.10, 42.33, 8, 13},
    {"Lyon", 4.80, 45.73, 7, 12},
    {"Busan", 129.02, 35.10, 9, 14},
}};

Rgb building_color(int tier, int type) {
  Rgb c = kTypeHue[static_cast<std::size_t>(type)];
  for (auto& v : c) v *= kTierBrightness[static_cast<std::size_t>(tier)];
  return c;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Greedy area balancing: each building goes to the category whose share
// would stay furthest below its target.
template <std::size_t N>
std::vector<int> balance(const std::vector<std::size_t>& areas, const std::array<double, N>& share,
                         std::mt19937_64& rng) {
  std::vector<std::size_t> order(areas.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return areas[a] > areas[b]; });
  std::array<double, N> assigned{};
  std::array<std::size_t, N> tie_order{};
  std::iota(tie_order.begin(), tie_order.end(), 0);
  std::shuffle(tie_order.begin(), tie_order.end(), rng);
  std::vector<int> out(areas.size(), 0);
  for (auto b : order) {
    std::size_t best = tie_order[0];
    double best_load = 1e300;
    for (auto k : tie_order) {
      double load = (assigned[k] + static_cast<double>(areas[b])) / share[k];
      if (load < best_load) {
        best_load = load;
        best = k;
      }
    }
    assigned[best] += static_cast<double>(areas[b]);
    out[b] = static_cast<int>(best);
  }
  return out;
}

double dist2(const Rgb& a, const Rgb& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < 3; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

const std::vector<std::string>& oracle_cities() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& c : kCities) v.emplace_back(c.name);
    return v;
  }();
  return names;
}

OracleTile generate_oracle_tile(std::uint64_t corpus_seed, std::size_t index, const OracleCityConfig& config) {
  const Resolution res = config.resolution;
  if (res.height % kOracleCells != 0 || res.width % kOracleCells != 0) {
    throw Error(ErrorKind::invalid_argument, "oracle city resolution must be a multiple of 16");
  }
  const std::size_t cell_h = res.height / kOracleCells;
  const std::size_t cell_w = res.width / kOracleCells;
  std::mt19937_64 rng(mix(corpus_seed * 1000003ULL + index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto randint = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const CityStyle& style = kCities[index % kCities.size()];
  OracleTile out;
  Tile& tile = out.tile;
  char id[32];
  std::snprintf(id, sizeof id, "oc%05zu", index);
  tile.tile_id = id;
  tile.city = style.name;
  const double lat_step = kTileMeters / 111320.0;
  const double lon_step = kTileMeters / (111320.0 * std::cos(style.origin_lat * M_PI / 180.0));
  const auto slot = static_cast<double>(index / kCities.size());
  const double col = std::fmod(slot, 40.0);
  const double row = std::floor(slot / 40.0);
  tile.bbox = {style.origin_lon + col * lon_step, style.origin_lat + row * lat_step,
               style.origin_lon + (col + 1) * lon_step, style.origin_lat + (row + 1) * lat_step};
  PixelTransform tf(tile.bbox, res);

  // Cell occupancy: 0 free, 1 road, 2 railway, 3 water, 4 building.
  std::array<std::array<int, kOracleCells>, kOracleCells> occ{};
  auto pick_lines = [&](int count, std::vector<int>& taken) {
    std::vector<int> chosen;
    for (int attempt = 0; attempt < 100 && static_cast<int>(chosen.size()) < count; ++attempt) {
      int c = randint(2, static_cast<int>(kOracleCells) - 3);
      bool ok = std::all_of(taken.begin(), taken.end(), [&](int t) { return std::abs(t - c) >= 3; });
      if (ok) {
        chosen.push_back(c);
        taken.push_back(c);
      }
    }
    return chosen;
  };

  auto add_line = [&](ConstraintChannel channel, bool horizontal, int cell) {
    Geometry g;
    g.channel = channel;
    g.kind = GeometryKind::line;
    if (horizontal) {
      double y = (cell + 0.5) * static_cast<double>(cell_h);
      g.points = {{tf.to_lon(0.0), tf.to_lat(y)}, {tf.to_lon(static_cast<double>(res.width)), tf.to_lat(y)}};
      g.width_px = static_cast<double>(cell_h);
    } else {
      double x = (cell + 0.5) * static_cast<double>(cell_w);
      g.points = {{tf.to_lon(x), tf.to_lat(0.0)}, {tf.to_lon(x), tf.to_lat(static_cast<double>(res.height))}};
      g.width_px = static_cast<double>(cell_w);
    }
    out.vectors.push_back(std::move(g));
    for (std::size_t k = 0; k < kOracleCells; ++k) {
      int& o = horizontal ? occ[static_cast<std::size_t>(cell)][k] : occ[k][static_cast<std::size_t>(cell)];
      if (o == 0 || channel == ConstraintChannel::major_road) o = channel == ConstraintChannel::major_road ? 1 : 2;
    }
  };

  std::vector<int> rows_taken, cols_taken;
  for (int r : pick_lines(randint(1, 2), rows_taken)) add_line(ConstraintChannel::major_road, true, r);
  for (int c : pick_lines(randint(1, 2), cols_taken)) add_line(ConstraintChannel::major_road, false, c);
  if (unit(rng) < 0.35) {
    bool horizontal = unit(rng) < 0.5;
    auto picked = pick_lines(1, horizontal ? rows_taken : cols_taken);
    if (!picked.empty()) add_line(ConstraintChannel::railway, horizontal, picked[0]);
  }
  if (unit(rng) < 0.3) {
    int depth = randint(2, 3);
    int side = randint(0, 3);  // north, south, west, east
    std::size_t r0 = 0, r1 = kOracleCells, c0 = 0, c1 = kOracleCells;
    if (side == 0) r1 = static_cast<std::size_t>(depth);
    if (side == 1) r0 = kOracleCells - static_cast<std::size_t>(depth);
    if (side == 2) c1 = static_cast<std::size_t>(depth);
    if (side == 3) c0 = kOracleCells - static_cast<std::size_t>(depth);
    Geometry g;
    g.channel = ConstraintChannel::water;
    g.kind = GeometryKind::polygon;
    auto px = [&](std::size_t c) { return tf.to_lon(static_cast<double>(c * cell_w)); };
    auto py = [&](std::size_t r) { return tf.to_lat(static_cast<double>(r * cell_h)); };
    g.points = {{px(c0), py(r0)}, {px(c1), py(r0)}, {px(c1), py(r1)}, {px(c0), py(r1)}};
    out.vectors.push_back(std::move(g));
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        if (occ[r][c] == 0) occ[r][c] = 3;
      }
    }
  }

  // Buildings: cell-aligned rectangles with a one-cell gap between them.
  const int wanted = randint(style.min_buildings, style.max_buildings);
  std::vector<PixelRect> cells;
  for (int attempt = 0; attempt < 400 && static_cast<int>(cells.size()) < wanted; ++attempt) {
    auto h = static_cast<std::size_t>(randint(1, 3));
    auto w = static_cast<std::size_t>(randint(1, 3));
    if (h * w == 9) continue;
    auto r = static_cast<std::size_t>(randint(0, static_cast<int>(kOracleCells - h)));
    auto c = static_cast<std::size_t>(randint(0, static_cast<int>(kOracleCells - w)));
    bool ok = true;
    for (std::size_t rr = r; rr < r + h && ok; ++rr) {
      for (std::size_t cc = c; cc < c + w && ok; ++cc) ok = occ[rr][cc] == 0;
    }
    for (std::size_t rr = (r == 0 ? 0 : r - 1); rr < std::min(kOracleCells, r + h + 1) && ok; ++rr) {
      for (std::size_t cc = (c == 0 ? 0 : c - 1); cc < std::min(kOracleCells, c + w + 1) && ok; ++cc) {
        ok = occ[rr][cc] != 4;
      }
    }
    if (!ok) continue;
    for (std::size_t rr = r; rr < r + h; ++rr) {
      for (std::size_t cc = c; cc < c + w; ++cc) occ[rr][cc] = 4;
    }
    cells.push_back({r, c, h, w});
  }
  std::vector<std::size_t> areas;
  for (const auto& c : cells) areas.push_back(c.area());
  auto tiers = balance(areas, kTierShare, rng);
  auto types = balance(areas, kTypeShare, rng);
  for (std::size_t b = 0; b < cells.size(); ++b) {
    OracleBuilding bld;
    bld.footprint = {cells[b].row * cell_h, cells[b].col * cell_w, cells[b].rows * cell_h, cells[b].cols * cell_w};
    bld.height_tier = tiers[b];
    bld.energy_type = types[b];
    bld.height_m = kTierHeight[static_cast<std::size_t>(tiers[b])] * (1.0 + (unit(rng) - 0.5) * 0.3);
    bld.energy_kbtu = kTypeEnergy[static_cast<std::size_t>(types[b])] * std::exp((unit(rng) - 0.5) * 0.5);
    out.buildings.push_back(bld);
  }

  tile.constraints = rasterize_constraints(out.vectors, tile.bbox, res).mask;
  tile.height = Grid<float>(res.height, res.width, 1, 0.0f);
  tile.energy = Grid<float>(res.height, res.width, 1, 0.0f);
  tile.image = Grid<float>(res.height, res.width, 3, 0.0f);

  const float illumination = static_cast<float>(0.95 + 0.1 * unit(rng));
  for (std::size_t y = 0; y < res.height; ++y) {
    for (std::size_t x = 0; x < res.width; ++x) {
      Rgb c = kGround;
      if (tile.constraints.at(y, x, 0)) c = kWater;
      if (tile.constraints.at(y, x, 1)) c = kRailway;
      if (tile.constraints.at(y, x, 2)) c = kRoad;
      for (std::size_t k = 0; k < 3; ++k) tile.image.at(y, x, k) = c[k];
    }
  }
  for (const auto& b : out.buildings) {
    Rgb c = building_color(b.height_tier, b.energy_type);
    const auto log_energy = static_cast<float>(std::log1p(b.energy_kbtu));
    for (std::size_t y = b.footprint.row; y < b.footprint.row + b.footprint.rows; ++y) {
      for (std::size_t x = b.footprint.col; x < b.footprint.col + b.footprint.cols; ++x) {
        for (std::size_t k = 0; k < 3; ++k) tile.image.at(y, x, k) = c[k];
        tile.height.at(y, x) = static_cast<float>(b.height_m);
        tile.energy.at(y, x) = log_energy;
      }
    }
  }
  for (auto& v : tile.image.values()) {
    v = std::clamp(v * illumination + static_cast<float>((unit(rng) - 0.5) * 0.04), 0.0f, 1.0f);
  }

  // Density metrics from the rendered layers.
  const double px_m2 = (kTileMeters / static_cast<double>(res.width)) * (kTileMeters / static_cast<double>(res.height));
  const double land_m2 = kTileMeters * kTileMeters;
  double built = 0.0, volume = 0.0;
  for (const auto& b : out.buildings) {
    built += static_cast<double>(b.footprint.area()) * px_m2;
    volume += static_cast<double>(b.footprint.area()) * px_m2 * b.height_m;
  }
  double road_km = 0.0;
  for (const auto& g : out.vectors) {
    if (g.channel != ConstraintChannel::major_road) continue;
    for (std::size_t k = 0; k + 1 < g.points.size(); ++k) {
      double dx = (tf.to_x(g.points[k + 1].lon) - tf.to_x(g.points[k].lon)) * kTileMeters / static_cast<double>(res.width);
      double dy = (tf.to_y(g.points[k + 1].lat) - tf.to_y(g.points[k].lat)) * kTileMeters / static_cast<double>(res.height);
      road_km += std::hypot(dx, dy) / 1000.0;
    }
  }
  tile.density = {100.0 * built / land_m2, volume / land_m2, road_km / (land_m2 / 1.0e6)};

  if (unit(rng) < config.null_block_probability) {
    double frac = config.min_null_block_fraction +
                  (config.max_null_block_fraction - config.min_null_block_fraction) * unit(rng);
    double aspect = 0.6 + 0.8 * unit(rng);
    double area = frac * static_cast<double>(res.height * res.width);
    auto rows = static_cast<std::size_t>(std::clamp(std::sqrt(area * aspect), 1.0, static_cast<double>(res.height)));
    auto cols = static_cast<std::size_t>(std::clamp(area / static_cast<double>(rows), 1.0, static_cast<double>(res.width)));
    auto r0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(res.height - rows + 1));
    auto c0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(res.width - cols + 1));
    out.null_block = PixelRect{r0, c0, rows, cols};
    for (std::size_t y = r0; y < r0 + rows; ++y) {
      for (std::size_t x = c0; x < c0 + cols; ++x) tile.energy.at(y, x) = kEnergyNull;
    }
  }

  std::mt19937_64 split_rng(mix(corpus_seed ^ (0xa5a5a5a5ULL + index * 7919ULL)));
  tile.split = std::uniform_real_distribution<double>(0.0, 1.0)(split_rng) < config.test_fraction ? Split::test
                                                                                                 : Split::train;
  return out;
}

std::vector<OracleTile> generate_oracle_corpus(std::size_t count, std::uint64_t corpus_seed,
                                               const OracleCityConfig& config) {
  std::vector<OracleTile> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_oracle_tile(corpus_seed, i, config));
  return out;
}

SurfaceLabel classify_pixel(const std::array<float, 3>& rgb) {
  SurfaceLabel best;
  double best_d = dist2(rgb, kGround);
  auto consider = [&](const Rgb& c, SurfaceLabel label) {
    double d = dist2(rgb, c);
    if (d < best_d) {
      best_d = d;
      best = label;
    }
  };
  consider(kRoad, {Surface::road, -1, -1});
  consider(kWater, {Surface::water, -1, -1});
  consider(kRailway, {Surface::railway, -1, -1});
  for (int t = 0; t < kHeightTiers; ++t) {
    for (int e = 0; e < kEnergyTypes; ++e) consider(building_color(t, e), {Surface::building, t, e});
  }
  return best;
}

Grid<std::uint8_t> detect_roads(const Grid<float>& image) {
  Grid<std::uint8_t> out(image.height(), image.width(), 1, 0);
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      Rgb px{image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)};
      out.at(y, x) = classify_pixel(px).surface == Surface::road ? 1 : 0;
    }
  }
  return out;
}

double mask_iou(const Grid<std::uint8_t>& a, const Grid<std::uint8_t>& b) {
  require_same_extent(a, b, "mask_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool x = a[i] != 0, y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace sense::tiles
