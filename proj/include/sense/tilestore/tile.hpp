#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sense/grid.hpp"

namespace sense::tiles {

// Geodetic rectangle in WGS84 degrees.
struct GeoBox {
  double min_lon = 0.0;
  double min_lat = 0.0;
  double max_lon = 0.0;
  double max_lat = 0.0;

  bool degenerate() const noexcept { return !(max_lon > min_lon) || !(max_lat > min_lat); }
};

struct Resolution {
  std::size_t height = 64;
  std::size_t width = 64;
};

enum class ConstraintChannel : std::uint8_t { water = 0, railway = 1, major_road = 2 };
inline constexpr std::size_t kConstraintChannels = 3;
const char* to_string(ConstraintChannel channel);
ConstraintChannel constraint_channel_from_string(const std::string& name);

enum class QcStatus { accepted, rejected, unreviewed };
const char* to_string(QcStatus status);
QcStatus qc_status_from_string(const std::string& name);

enum class Split { train, val, test, unassigned };
const char* to_string(Split split);
Split split_from_string(const std::string& name);

// Building Coverage Ratio [%], Building Volume Density [m^3/m^2],
// Road Density [km/km^2].
struct DensityMetrics {
  double bcr = 0.0;
  double bvd = 0.0;
  double rd = 0.0;

  // Throws Error(invalid_argument) naming the violated bound.
  void validate() const;
  bool operator==(const DensityMetrics&) const = default;
};

// Marks energy pixels that belong to the annotated extent but carry no
// disclosure value. Distinct from 0 (no building / non-energy pixel).
inline constexpr float kEnergyNull = -1.0f;

inline bool is_energy_null(float v) noexcept { return v < 0.0f || v != v; }

struct Tile {
  std::string tile_id;
  std::string city;
  GeoBox bbox;
  Grid<float> image;               // H x W x 3 in [0,1]
  Grid<std::uint8_t> constraints;  // H x W x 3 in {0,1}: water, railway, major road
  Grid<float> height;              // meters, 0 = non-building
  Grid<float> energy;              // log1p(kBtu), 0 = non-energy, kEnergyNull = missing
  DensityMetrics density;
  QcStatus qc = QcStatus::unreviewed;
  std::string qc_reason;
  Split split = Split::unassigned;

  Resolution resolution() const { return {image.height(), image.width()}; }
  void validate() const;
};

enum class ClassSource { height, energy };
const char* to_string(ClassSource source);

// Discretized label grid. Label 0 is background; bin_edges has
// n_classes - 2 entries for a non-degenerate map.
struct ClassMap {
  Grid<std::uint8_t> labels;
  int n_classes = 0;
  std::vector<double> bin_edges;
  ClassSource source = ClassSource::height;
  bool degenerate = false;
  std::string percentile_method = "linear";
};

}  // namespace sense::tiles
