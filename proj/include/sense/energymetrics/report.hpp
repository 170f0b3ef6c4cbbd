#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "sense/energymetrics/metrics.hpp"
#include "sense/tilestore/raster_io.hpp"

namespace sense::metrics {

// Frozen training-split discretization used to compare predictions with
// ground truth and to invert classes to kBtu.
struct EnergyBins {
  std::vector<double> edges;               // log1p domain tertile edges
  std::vector<double> representative_log;  // per class, index 0 = 0
};

// One evaluated tile: predicted energy classes against the ground-truth
// log1p(kBtu) layer.
struct EnergyPair {
  std::string tile_id;
  tiles::ClassMap pred;
  Grid<float> truth_log;
};

struct CalibrationReport {
  std::size_t n_tiles = 0;
  double nmbe = 0.0;
  double cvrmse = 0.0;
  double nmbe_log = 0.0;
  double cvrmse_log = 0.0;
  SegmentationMetrics segmentation;
  Verdict verdict = Verdict::uncalibrated;
  std::vector<std::string> class_names;
  std::vector<double> truth_totals;
  std::vector<double> pred_totals;
};

const std::vector<std::string>& energy_class_names();
const std::vector<std::string>& height_class_names();

// Tile totals sum kBtu over pixels with a ground-truth annotation (null
// sentinels excluded on both sides, also from the segmentation scores); truth uses expm1 of the continuous
// layer, predictions use reconstruct_energy. Log variants sum log1p values.
CalibrationReport evaluate_energy(const std::vector<EnergyPair>& pairs, const EnergyBins& bins,
                                  bool foreground_only = false);

nlohmann::json to_json(const SegmentationMetrics& m, const std::vector<std::string>& class_names);
nlohmann::json to_json(const CalibrationReport& report);
std::string summary_table(const CalibrationReport& report);
std::string segmentation_table(const SegmentationMetrics& m, const std::vector<std::string>& class_names);

// Normalised confusion matrix rendered as a grayscale PNG, `cell_px`
// pixels per entry.
tiles::Bytes confusion_png(const Confusion& confusion, std::size_t cell_px = 32);

}  // namespace sense::metrics
