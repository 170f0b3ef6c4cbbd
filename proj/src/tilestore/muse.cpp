#include "sense/tilestore/muse.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sense::tiles {
namespace fs = std::filesystem;

const std::vector<CityCount>& published_city_counts() {
  static const std::vector<CityCount> counts = {
      {"New York City", 1589, 579},
      {"Boston", 2051, 526},
      {"Lyon", 1412, 687},
      {"Busan", 1438, 996},
  };
  return counts;
}

MuseIndex load_muse(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::io, "MUSE root is not a directory: " + root.string());
  MuseIndex index;
  std::vector<fs::path> city_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.csv")) city_dirs.push_back(entry.path());
  }
  std::sort(city_dirs.begin(), city_dirs.end());
  static const char* kLayers[] = {"image.png", "constraints.png", "height.f32r", "energy.f32r", "meta.json"};
  for (const auto& dir : city_dirs) {
    std::ifstream in(dir / "manifest.csv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) cols.push_back(col);
      if (cols.size() != 3) {
        throw Error(ErrorKind::io, (dir / "manifest.csv").string() + ": expected 3 columns");
      }
      ManifestEntry e{cols[0], cols[1], Split::unassigned, qc_status_from_string(cols[2])};
      auto& count = index.counts[e.city];
      count.city = e.city;
      ++count.total;
      if (e.qc == QcStatus::accepted) {
        ++count.accepted;
        for (const char* layer : kLayers) {
          if (!fs::exists(dir / e.tile_id / layer)) {
            index.missing_layers.push_back(dir.filename().string() + "/" + e.tile_id + "/" + layer);
          }
        }
      }
      index.entries.push_back(std::move(e));
    }
  }
  return index;
}

std::vector<std::string> check_published_counts(const MuseIndex& index) {
  std::vector<std::string> problems;
  for (const auto& expected : published_city_counts()) {
    auto it = index.counts.find(expected.city);
    if (it == index.counts.end()) {
      problems.push_back(expected.city + ": missing from dataset");
      continue;
    }
    const auto& got = it->second;
    if (got.total != expected.total || got.accepted != expected.accepted) {
      problems.push_back(expected.city + ": expected " + std::to_string(expected.accepted) + " of " +
                         std::to_string(expected.total) + " accepted, found " + std::to_string(got.accepted) +
                         " of " + std::to_string(got.total));
    }
  }
  return problems;
}

}  // namespace sense::tiles
