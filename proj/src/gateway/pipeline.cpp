#include "sense/gateway/pipeline.hpp"

#include <fstream>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/muse.hpp"
#include "sense/tilestore/oracle_city.hpp"

namespace sense::gateway {

using nlohmann::json;

namespace {

json bins_json(const tiles::BinEdges& b, const std::vector<double>& representative) {
  return json{{"scheme", b.scheme == tiles::DiscretizationScheme::height_quintile_4 ? "height_quintile_4" : "energy_tertile"},
              {"edges", b.edges},
              {"degenerate", b.degenerate},
              {"percentile_method", "linear"},
              {"representative", representative}};
}

tiles::BinEdges bins_from(const json& j, tiles::DiscretizationScheme scheme, std::vector<double>& representative) {
  tiles::BinEdges b;
  b.scheme = scheme;
  b.edges = j.at("edges").get<std::vector<double>>();
  b.degenerate = j.value("degenerate", false);
  representative = j.at("representative").get<std::vector<double>>();
  if (representative.size() != static_cast<std::size_t>(tiles::class_count(scheme))) {
    throw Error(ErrorKind::invalid_argument, "bins file: representative list has the wrong length");
  }
  return b;
}

}  // namespace

json BinsFile::to_json() const {
  return json{{"format", "sense-bins"},
              {"fitted_tiles", fitted_tiles},
              {"height", bins_json(height, height_representative)},
              {"energy", bins_json(energy, energy_representative_log)}};
}

BinsFile BinsFile::from_json(const json& j) {
  BinsFile b;
  try {
    if (j.value("format", "") != "sense-bins") throw Error(ErrorKind::invalid_argument, "not a bins file");
    b.fitted_tiles = j.value("fitted_tiles", std::size_t{0});
    b.height = bins_from(j.at("height"), tiles::DiscretizationScheme::height_quintile_4, b.height_representative);
    b.energy = bins_from(j.at("energy"), tiles::DiscretizationScheme::energy_tertile, b.energy_representative_log);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("bins file: ") + e.what());
  }
  return b;
}

void BinsFile::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
  f << to_json().dump(2) << "\n";
}

BinsFile BinsFile::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::not_found, "no bins file at " + path.string() + " (run discretize first)");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, path.string() + ": " + e.what());
  }
  return from_json(j);
}

BinsFile fit_bins(const std::vector<tiles::Tile>& train_tiles) {
  if (train_tiles.empty()) throw Error(ErrorKind::invalid_argument, "fit_bins: no training tiles");
  std::vector<float> hv, ev;
  for (const auto& t : train_tiles) {
    hv.insert(hv.end(), t.height.values().begin(), t.height.values().end());
    if (t.qc != tiles::QcStatus::rejected) ev.insert(ev.end(), t.energy.values().begin(), t.energy.values().end());
  }
  BinsFile b;
  b.fitted_tiles = train_tiles.size();
  b.height = tiles::fit_bin_edges(hv, tiles::DiscretizationScheme::height_quintile_4);
  b.energy = tiles::fit_bin_edges(ev, tiles::DiscretizationScheme::energy_tertile);
  b.height_representative = tiles::bin_medians(hv, b.height);
  b.energy_representative_log = tiles::bin_medians(ev, b.energy);
  return b;
}

std::vector<tiles::Tile> load_tiles(const tiles::TileStore& store, const std::vector<tiles::ManifestEntry>& entries) {
  std::vector<tiles::Tile> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(store.load(e));
  return out;
}

Corpus load_corpus(const tiles::TileStore& store, bool accepted_only) {
  Corpus c;
  for (const auto& e : store.manifest()) {
    if (accepted_only && e.qc == tiles::QcStatus::rejected) continue;
    if (e.split == tiles::Split::train) c.train.push_back(store.load(e));
    if (e.split == tiles::Split::test) c.test.push_back(store.load(e));
  }
  if (c.train.empty()) throw Error(ErrorKind::invalid_argument, "corpus at " + store.root().string() + " has no training tiles");
  return c;
}

std::vector<tiles::ManifestEntry> ingest_oracle(const tiles::TileStore& store, std::size_t count, std::uint64_t seed,
                                                std::size_t resolution) {
  tiles::OracleCityConfig cfg;
  cfg.resolution = {resolution, resolution};
  std::vector<tiles::ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    auto o = tiles::generate_oracle_tile(seed, i, cfg);
    store.save(o.tile);
    entries.push_back({o.tile.tile_id, o.tile.city, o.tile.split, o.tile.qc});
  }
  store.write_manifest(entries);
  return entries;
}

tiles::Split split_for(const std::string& tile_id, std::uint64_t seed, double test_fraction) {
  const auto h = diffcore::stable_seed(tile_id, seed);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < test_fraction ? tiles::Split::test : tiles::Split::train;
}

MuseIngest ingest_muse(const std::filesystem::path& muse_root, const tiles::TileStore& store, std::uint64_t seed,
                       double test_fraction) {
  auto index = tiles::load_muse(muse_root);
  MuseIngest out;
  out.count_mismatches = tiles::check_published_counts(index);
  out.missing_layers = index.missing_layers;
  const tiles::TileStore source(muse_root);
  const bool in_place = std::filesystem::exists(store.root()) &&
                        std::filesystem::equivalent(std::filesystem::absolute(muse_root), store.root());
  for (auto e : index.entries) {
    e.split = split_for(e.tile_id, seed, test_fraction);
    if (e.qc == tiles::QcStatus::accepted) {
      auto t = source.load(e);
      t.split = e.split;
      t.qc = e.qc;
      if (in_place) {
        store.update_meta(t);
      } else {
        store.save(t);
      }
    }
    out.entries.push_back(e);
  }
  store.write_manifest(out.entries);
  return out;
}

QcSummary run_qc(const tiles::TileStore& store, double max_null_block_fraction, const tiles::QcOverrides* overrides) {
  QcSummary s;
  auto entries = store.manifest();
  for (auto& e : entries) {
    tiles::QcDecision d;
    try {
      auto t = store.load(e);
      d = tiles::qc_filter(t, max_null_block_fraction, overrides);
      t.qc = d.status;
      t.qc_reason = d.reason;
      store.update_meta(t);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::io && err.kind() != ErrorKind::not_found) throw;
      d.status = tiles::QcStatus::rejected;
      d.reason = std::string("unreadable tile: ") + err.what();
    }
    e.qc = d.status;
    if (d.status == tiles::QcStatus::accepted) {
      ++s.accepted;
    } else {
      ++s.rejected;
      s.rejections.emplace_back(e.tile_id, d.reason);
    }
  }
  store.write_manifest(entries);
  return s;
}

metrics::CalibrationReport evaluate_tile_pairs(const tiles::TileStore& store,
                                               const std::vector<std::pair<std::string, std::string>>& pred_truth,
                                               const BinsFile& bins, bool foreground_only) {
  return evaluate_tile_pairs(store, store, pred_truth, bins, foreground_only);
}

metrics::CalibrationReport evaluate_tile_pairs(const tiles::TileStore& pred_store, const tiles::TileStore& truth_store,
                                               const std::vector<std::pair<std::string, std::string>>& pred_truth,
                                               const BinsFile& bins, bool foreground_only) {
  if (pred_truth.empty()) throw Error(ErrorKind::invalid_argument, "evaluate: no tile pairs");
  auto load = [](const tiles::TileStore& store, const std::string& id) {
    auto e = store.find(id);
    if (!e) throw Error(ErrorKind::not_found, "unknown tile '" + id + "' in " + store.root().string());
    return store.load(*e);
  };
  std::vector<metrics::EnergyPair> pairs;
  for (const auto& [pred_id, truth_id] : pred_truth) {
    auto pred = load(pred_store, pred_id);
    auto truth = load(truth_store, truth_id);
    if (pred.energy.height() != truth.energy.height() || pred.energy.width() != truth.energy.width()) {
      throw Error(ErrorKind::shape_mismatch, "evaluate: '" + pred_id + "' and '" + truth_id + "' differ in size");
    }
    pairs.push_back({truth_id, tiles::apply_bins(pred.energy, bins.energy), truth.energy});
  }
  return metrics::evaluate_energy(pairs, bins.energy_bins(), foreground_only);
}

std::string report_text(const metrics::CalibrationReport& report) { return metrics::to_json(report).dump(2) + "\n"; }

}  // namespace sense::gateway
