#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sense/grid.hpp"

namespace sense::tiles {

using Bytes = std::vector<std::uint8_t>;

// 8-bit PNG with 1, 3 or 4 channels.
Bytes encode_png(const Grid<std::uint8_t>& pixels);
Grid<std::uint8_t> decode_png(const Bytes& png);

void write_png(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);
Grid<std::uint8_t> read_png(const std::filesystem::path& path);

Grid<std::uint8_t> to_rgb8(const Grid<float>& image);
Grid<float> from_rgb8(const Grid<std::uint8_t>& image);
// {0,1} mask <-> {0,255} PNG samples.
Grid<std::uint8_t> mask_to_png_samples(const Grid<std::uint8_t>& mask);
Grid<std::uint8_t> mask_from_png_samples(const Grid<std::uint8_t>& samples);

// Float raster container, little-endian:
//   0   8  magic "SENSEF32"
//   8   4  u32 version (1)
//   12  4  u32 height
//   16  4  u32 width
//   20  4  u32 channels
//   24  1  u8 layer kind
//   25  3  reserved (zero)
//   28  8  u64 uncompressed payload bytes
//   36  8  u64 compressed payload bytes
//   44  .. zlib stream of float32 samples, row-major HWC
enum class LayerKind : std::uint8_t { generic = 0, height = 1, energy = 2 };

inline constexpr char kFloatRasterMagic[8] = {'S', 'E', 'N', 'S', 'E', 'F', '3', '2'};
inline constexpr std::size_t kFloatRasterHeaderBytes = 44;

struct FloatRaster {
  Grid<float> grid;
  LayerKind kind = LayerKind::generic;
};

Bytes encode_float_raster(const Grid<float>& grid, LayerKind kind);
FloatRaster decode_float_raster(const Bytes& bytes);

void write_float_raster(const std::filesystem::path& path, const Grid<float>& grid, LayerKind kind);
FloatRaster read_float_raster(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);

}  // namespace sense::tiles
