#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sense/tilestore/tile.hpp"

namespace sense::metrics {

// ASHRAE Guideline 14 calibration tolerances, in percent. Inclusive.
inline constexpr double kAshraeNmbeLimit = 10.0;
inline constexpr double kAshraeCvrmseLimit = 30.0;

using Confusion = std::vector<std::vector<std::uint64_t>>;  // [truth][pred]

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  std::uint64_t support = 0;  // ground-truth pixels
  bool present = false;       // appears in truth or prediction
};

struct SegmentationMetrics {
  Confusion confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double miou = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_dice = 0.0;
};

// Accumulates a confusion matrix over many (pred, truth) label grids.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int n_classes);
  // Pixels where `valid` is zero are skipped.
  void add(const Grid<std::uint8_t>& pred, const Grid<std::uint8_t>& truth, const Grid<std::uint8_t>* valid = nullptr);
  void add(const tiles::ClassMap& pred, const tiles::ClassMap& truth);
  const Confusion& confusion() const { return confusion_; }
  int n_classes() const { return n_classes_; }

 private:
  int n_classes_;
  Confusion confusion_;
};

// IoU = TP/(TP+FP+FN), Dice = 2TP/(2TP+FP+FN). A class absent from both
// maps scores 1 on every metric; other zero denominators score 0. With
// `foreground_only`, class 0 is left out of the class means.
SegmentationMetrics metrics_from_confusion(const Confusion& confusion, bool foreground_only = false);

SegmentationMetrics confusion_and_seg_metrics(const tiles::ClassMap& pred, const tiles::ClassMap& truth,
                                              bool foreground_only = false);

// Row-normalised confusion (rows with no support stay zero).
std::vector<std::vector<double>> normalize_rows(const Confusion& confusion);

// 100 * sum(pred - truth) / sum(truth). Positive = over-prediction.
double nmbe(std::span<const double> truth_totals, std::span<const double> pred_totals);

// 100 * sqrt(mean((pred - truth)^2)) / mean(truth).
double cvrmse(std::span<const double> truth_totals, std::span<const double> pred_totals);

enum class Verdict { calibrated, uncalibrated };
const char* to_string(Verdict verdict);

Verdict ashrae_verdict(double nmbe_percent, double cvrmse_percent);

// Class 0 -> 0 kBtu; class c -> expm1(representative_log[c]).
Grid<double> reconstruct_energy(const tiles::ClassMap& pred, std::span<const double> representative_log);

}  // namespace sense::metrics
