#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

struct ManifestEntry {
  std::string tile_id;
  std::string city;
  Split split = Split::unassigned;
  QcStatus qc = QcStatus::unreviewed;
  bool operator==(const ManifestEntry&) const = default;
};

// Tab-separated: tile_id, city, split, qc; first line is a header.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

std::string city_slug(const std::string& city);

// On-disk layout: <root>/<city-slug>/<tile_id>/{image.png, constraints.png,
// height.f32r, energy.f32r, meta.json} plus <root>/manifest.tsv.
class TileStore {
 public:
  explicit TileStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path tile_dir(const std::string& city, const std::string& tile_id) const;
  std::filesystem::path manifest_path() const { return root_ / "manifest.tsv"; }

  // Single writer per tile id: a concurrent save of the same id fails.
  void save(const Tile& tile) const;
  Tile load(const std::string& city, const std::string& tile_id) const;
  Tile load(const ManifestEntry& entry) const { return load(entry.city, entry.tile_id); }
  bool contains(const std::string& city, const std::string& tile_id) const;
  // Rewrites only meta.json (QC status, split).
  void update_meta(const Tile& tile) const;

  std::vector<ManifestEntry> manifest() const;
  void write_manifest(const std::vector<ManifestEntry>& entries) const;
  std::optional<ManifestEntry> find(const std::string& tile_id) const;

 private:
  std::filesystem::path root_;
};

}  // namespace sense::tiles
