#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sense/tilestore/rasterize.hpp"
#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

// Deterministic synthetic city: constraints, buildings, imagery, height and
// energy are all known functions of a seed. Layout lives on a 16 x 16 cell
// lattice so every feature boundary falls on a latent-cell boundary for a
// 4x downsampling autoencoder.
inline constexpr std::size_t kOracleCells = 16;
inline constexpr int kHeightTiers = 4;
inline constexpr int kEnergyTypes = 3;

struct PixelRect {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t area() const { return rows * cols; }
};

struct OracleBuilding {
  PixelRect footprint;  // in pixels
  int height_tier = 0;  // 0..3
  int energy_type = 0;  // 0..2
  double height_m = 0.0;
  double energy_kbtu = 0.0;
};

struct OracleTile {
  Tile tile;
  std::vector<Geometry> vectors;
  std::vector<OracleBuilding> buildings;
  std::optional<PixelRect> null_block;  // energy annotations missing here
};

struct OracleCityConfig {
  Resolution resolution{64, 64};
  double null_block_probability = 0.25;
  double min_null_block_fraction = 0.10;  // of the tile area
  double max_null_block_fraction = 0.45;
  double test_fraction = 0.2;
};

const std::vector<std::string>& oracle_cities();

OracleTile generate_oracle_tile(std::uint64_t corpus_seed, std::size_t index,
                                const OracleCityConfig& config = {});

std::vector<OracleTile> generate_oracle_corpus(std::size_t count, std::uint64_t corpus_seed,
                                               const OracleCityConfig& config = {});

// Surface palette used by the renderer, and its inverse.
enum class Surface : std::uint8_t { ground = 0, road, water, railway, building };

struct SurfaceLabel {
  Surface surface = Surface::ground;
  int height_tier = -1;
  int energy_type = -1;
};

// Classifies a pixel by nearest palette colour after normalising the
// per-tile illumination.
SurfaceLabel classify_pixel(const std::array<float, 3>& rgb);

// Re-detects the major-road layer from rendered (or generated) imagery.
Grid<std::uint8_t> detect_roads(const Grid<float>& image);

double mask_iou(const Grid<std::uint8_t>& a, const Grid<std::uint8_t>& b);

}  // namespace sense::tiles
