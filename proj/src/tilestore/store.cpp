#include "sense/tilestore/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sense/tilestore/prompt.hpp"
#include "sense/tilestore/raster_io.hpp"

namespace sense::tiles {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json meta_json(const Tile& tile) {
  return json{
      {"tile_id", tile.tile_id},
      {"city", tile.city},
      {"bbox", {tile.bbox.min_lon, tile.bbox.min_lat, tile.bbox.max_lon, tile.bbox.max_lat}},
      {"density", {{"bcr", tile.density.bcr}, {"bvd", tile.density.bvd}, {"rd", tile.density.rd}}},
      {"qc", to_string(tile.qc)},
      {"qc_reason", tile.qc_reason},
      {"split", to_string(tile.split)},
      {"prompt", render_prompt(tile.city, tile.density)},
      {"resolution", {tile.image.height(), tile.image.width()}},
  };
}

// Exclusive per-tile write lock; released on scope exit.
class TileLock {
 public:
  explicit TileLock(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorKind::io, "tile is locked by another writer: " + path_.parent_path().string());
    }
  }
  ~TileLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  TileLock(const TileLock&) = delete;
  TileLock& operator=(const TileLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) throw Error(ErrorKind::io, "manifest row with " + std::to_string(cols.size()) + " columns");
    out.push_back({cols[0], cols[1], split_from_string(cols[2]), qc_status_from_string(cols[3])});
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write manifest " + path.string());
  out << "tile_id\tcity\tsplit\tqc\n";
  for (const auto& e : entries) {
    out << e.tile_id << '\t' << e.city << '\t' << to_string(e.split) << '\t' << to_string(e.qc) << '\n';
  }
}

std::string city_slug(const std::string& city) {
  std::string slug;
  for (char c : city) {
    bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-';
    slug += keep ? c : '_';
  }
  return slug;
}

TileStore::TileStore(fs::path root) : root_(std::move(root)) {}

fs::path TileStore::tile_dir(const std::string& city, const std::string& tile_id) const {
  return root_ / city_slug(city) / tile_id;
}

bool TileStore::contains(const std::string& city, const std::string& tile_id) const {
  return fs::exists(tile_dir(city, tile_id) / "meta.json");
}

void TileStore::save(const Tile& tile) const {
  tile.validate();
  fs::path dir = tile_dir(tile.city, tile.tile_id);
  fs::create_directories(dir);
  TileLock lock(dir / ".write.lock");
  write_png(dir / "image.png", to_rgb8(tile.image));
  write_png(dir / "constraints.png", mask_to_png_samples(tile.constraints));
  write_float_raster(dir / "height.f32r", tile.height, LayerKind::height);
  write_float_raster(dir / "energy.f32r", tile.energy, LayerKind::energy);
  std::ofstream(dir / "meta.json", std::ios::trunc) << meta_json(tile).dump(2) << '\n';
}

void TileStore::update_meta(const Tile& tile) const {
  fs::path dir = tile_dir(tile.city, tile.tile_id);
  if (!fs::exists(dir)) throw Error(ErrorKind::not_found, "no such tile " + tile.tile_id);
  TileLock lock(dir / ".write.lock");
  std::ofstream(dir / "meta.json", std::ios::trunc) << meta_json(tile).dump(2) << '\n';
}

Tile TileStore::load(const std::string& city, const std::string& tile_id) const {
  fs::path dir = tile_dir(city, tile_id);
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw Error(ErrorKind::not_found, "no such tile " + city + "/" + tile_id);
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "tile " + tile_id + ": bad meta.json: " + e.what());
  }
  Tile t;
  t.tile_id = meta.at("tile_id").get<std::string>();
  t.city = meta.at("city").get<std::string>();
  const auto& b = meta.at("bbox");
  t.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  const auto& d = meta.at("density");
  t.density = {d.at("bcr").get<double>(), d.at("bvd").get<double>(), d.at("rd").get<double>()};
  t.qc = qc_status_from_string(meta.value("qc", "unreviewed"));
  t.qc_reason = meta.value("qc_reason", "");
  t.split = split_from_string(meta.value("split", "unassigned"));
  t.image = from_rgb8(read_png(dir / "image.png"));
  t.constraints = mask_from_png_samples(read_png(dir / "constraints.png"));
  t.height = read_float_raster(dir / "height.f32r").grid;
  t.energy = read_float_raster(dir / "energy.f32r").grid;
  t.validate();
  return t;
}

std::vector<ManifestEntry> TileStore::manifest() const { return read_manifest(manifest_path()); }

void TileStore::write_manifest(const std::vector<ManifestEntry>& entries) const {
  fs::create_directories(root_);
  tiles::write_manifest(manifest_path(), entries);
}

std::optional<ManifestEntry> TileStore::find(const std::string& tile_id) const {
  for (auto& e : manifest()) {
    if (e.tile_id == tile_id) return e;
  }
  return std::nullopt;
}

}  // namespace sense::tiles
