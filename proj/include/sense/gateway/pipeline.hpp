#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sense/energymetrics/report.hpp"
#include "sense/tilestore/qc.hpp"
#include "sense/tilestore/store.hpp"
#include "sense/tilestore/transform.hpp"

// Building blocks shared by the command-line tool and the HTTP service, so
// both produce identical results for identical inputs.
namespace sense::gateway {

// Frozen training-split discretization of both physical layers.
struct BinsFile {
  tiles::BinEdges height;
  tiles::BinEdges energy;
  std::vector<double> height_representative;      // per class, meters
  std::vector<double> energy_representative_log;  // per class, log1p kBtu
  std::size_t fitted_tiles = 0;

  metrics::EnergyBins energy_bins() const { return {energy.edges, energy_representative_log}; }
  nlohmann::json to_json() const;
  static BinsFile from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static BinsFile load(const std::filesystem::path& path);
};

// Height bins over every training tile, energy bins over accepted training
// tiles (null sentinels excluded).
BinsFile fit_bins(const std::vector<tiles::Tile>& train_tiles);

struct Corpus {
  std::vector<tiles::Tile> train;
  std::vector<tiles::Tile> test;
};
// Loads manifest tiles by split. With `accepted_only`, rejected tiles are
// skipped.
Corpus load_corpus(const tiles::TileStore& store, bool accepted_only);
std::vector<tiles::Tile> load_tiles(const tiles::TileStore& store, const std::vector<tiles::ManifestEntry>& entries);

// Writes an oracle-city corpus into the store and its manifest.
std::vector<tiles::ManifestEntry> ingest_oracle(const tiles::TileStore& store, std::size_t count, std::uint64_t seed,
                                                std::size_t resolution);

// Copies a MUSE-format tree into the store; splits are drawn per tile id
// from `seed`. Returns the index so callers can check published counts.
struct MuseIngest {
  std::vector<tiles::ManifestEntry> entries;
  std::vector<std::string> count_mismatches;
  std::vector<std::string> missing_layers;
};
MuseIngest ingest_muse(const std::filesystem::path& muse_root, const tiles::TileStore& store, std::uint64_t seed,
                       double test_fraction = 0.2);

tiles::Split split_for(const std::string& tile_id, std::uint64_t seed, double test_fraction);

struct QcSummary {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::pair<std::string, std::string>> rejections;  // tile id, reason
};
// Re-decides every manifest tile, persists verdicts to meta files and the
// manifest.
QcSummary run_qc(const tiles::TileStore& store, double max_null_block_fraction,
                 const tiles::QcOverrides* overrides = nullptr);

// Predicted tiles' energy layers are discretized with the frozen bins and
// compared against the truth tiles' continuous layers.
metrics::CalibrationReport evaluate_tile_pairs(const tiles::TileStore& store,
                                               const std::vector<std::pair<std::string, std::string>>& pred_truth,
                                               const BinsFile& bins, bool foreground_only = false);
// Predictions and truths from separate stores.
metrics::CalibrationReport evaluate_tile_pairs(const tiles::TileStore& pred_store, const tiles::TileStore& truth_store,
                                               const std::vector<std::pair<std::string, std::string>>& pred_truth,
                                               const BinsFile& bins, bool foreground_only = false);

// Canonical report text written by the CLI and served by the API.
std::string report_text(const metrics::CalibrationReport& report);

}  // namespace sense::gateway
