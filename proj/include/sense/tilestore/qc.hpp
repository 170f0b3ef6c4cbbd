#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

struct QcDecision {
  QcStatus status = QcStatus::unreviewed;
  std::string reason;
  std::size_t annotated_area = 0;
  std::size_t largest_null_block = 0;
  double largest_null_fraction = 0.0;
  bool overridden = false;
};

// Expert verdicts, one "<tile_id> <accepted|rejected>" per line; '#' starts
// a comment.
class QcOverrides {
 public:
  QcOverrides() = default;
  static QcOverrides load(const std::filesystem::path& path);
  static QcOverrides parse(const std::string& text);

  void set(const std::string& tile_id, QcStatus status) { verdicts_[tile_id] = status; }
  std::optional<QcStatus> lookup(const std::string& tile_id) const;
  std::size_t size() const { return verdicts_.size(); }

 private:
  std::map<std::string, QcStatus> verdicts_;
};

// Size of the largest 4-connected component of null pixels in an energy
// layer.
std::size_t largest_null_component(const Grid<float>& energy);

// Annotated extent = pixels carrying either a value or the null sentinel.
// Rejected iff the largest null block exceeds `max_null_block_fraction` of
// that extent (or the extent is empty).
QcDecision qc_energy_layer(const Grid<float>& energy, double max_null_block_fraction);

QcDecision qc_filter(const Tile& tile, double max_null_block_fraction,
                     const QcOverrides* overrides = nullptr);

}  // namespace sense::tiles
