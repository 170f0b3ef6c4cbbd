#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sense/tilestore/store.hpp"

namespace sense::tiles {

struct CityCount {
  std::string city;
  std::size_t total = 0;
  std::size_t accepted = 0;
  bool operator==(const CityCount&) const = default;
};

// Per-city tile counts of the released dataset (before / after the
// expert energy-annotation review).
const std::vector<CityCount>& published_city_counts();

struct MuseIndex {
  std::vector<ManifestEntry> entries;
  std::map<std::string, CityCount> counts;
  std::vector<std::string> missing_layers;  // "<city>/<tile>/<layer>" for accepted tiles
};

// Reads a MUSE-format tree:
//   <root>/<City_Slug>/manifest.csv   header "tile_id,city,qc", qc in {accepted,rejected}
//   <root>/<City_Slug>/<tile_id>/{image.png, constraints.png, height.f32r, energy.f32r, meta.json}
// Layer files are only stat'ed (accepted tiles); rasters load lazily via
// TileStore on the same root.
MuseIndex load_muse(const std::filesystem::path& root);

// Human-readable mismatches between `index` and published_city_counts();
// empty when every city matches.
std::vector<std::string> check_published_counts(const MuseIndex& index);

}  // namespace sense::tiles
