#include "sense/energymetrics/metrics.hpp"

#include <cmath>
#include <numeric>

namespace sense::metrics {

ConfusionAccumulator::ConfusionAccumulator(int n_classes)
    : n_classes_(n_classes),
      confusion_(static_cast<std::size_t>(n_classes), std::vector<std::uint64_t>(static_cast<std::size_t>(n_classes), 0)) {
  if (n_classes < 1) throw Error(ErrorKind::invalid_argument, "confusion: need at least one class");
}

void ConfusionAccumulator::add(const Grid<std::uint8_t>& pred, const Grid<std::uint8_t>& truth,
                               const Grid<std::uint8_t>* valid) {
  if (!pred.same_extent(truth) || pred.channels() != truth.channels()) {
    throw Error(ErrorKind::shape_mismatch, "confusion: prediction and truth shapes differ");
  }
  if (valid && valid->size() != pred.size()) throw Error(ErrorKind::shape_mismatch, "confusion: valid mask shape differs");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    if (pred[i] >= n_classes_ || truth[i] >= n_classes_) {
      throw Error(ErrorKind::invalid_argument, "confusion: label out of range");
    }
    ++confusion_[truth[i]][pred[i]];
  }
}

void ConfusionAccumulator::add(const tiles::ClassMap& pred, const tiles::ClassMap& truth) {
  if (pred.n_classes != n_classes_ || truth.n_classes != n_classes_) {
    throw Error(ErrorKind::shape_mismatch, "confusion: class counts differ");
  }
  add(pred.labels, truth.labels);
}

SegmentationMetrics metrics_from_confusion(const Confusion& confusion, bool foreground_only) {
  const std::size_t n = confusion.size();
  SegmentationMetrics m;
  m.confusion = confusion;
  m.per_class.resize(n);
  std::uint64_t total = 0, correct = 0;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < n; ++k) total += confusion[c][k];
    correct += confusion[c][c];
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = confusion[c][c], fp = 0, fn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == c) continue;
      fn += confusion[c][k];
      fp += confusion[k][c];
    }
    ClassMetrics& cm = m.per_class[c];
    cm.support = tp + fn;
    cm.present = tp + fp + fn > 0;
    if (!cm.present) {
      cm.precision = cm.recall = cm.iou = cm.dice = 1.0;
      continue;
    }
    auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
    auto dtp = static_cast<double>(tp), dfp = static_cast<double>(fp), dfn = static_cast<double>(fn);
    cm.precision = ratio(dtp, dtp + dfp);
    cm.recall = ratio(dtp, dtp + dfn);
    cm.iou = ratio(dtp, dtp + dfp + dfn);
    cm.dice = ratio(2.0 * dtp, 2.0 * dtp + dfp + dfn);
  }
  m.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 1.0;
  const std::size_t first = foreground_only ? 1 : 0;
  const double count = static_cast<double>(n - first);
  for (std::size_t c = first; c < n; ++c) {
    m.miou += m.per_class[c].iou / count;
    m.mean_precision += m.per_class[c].precision / count;
    m.mean_recall += m.per_class[c].recall / count;
    m.mean_dice += m.per_class[c].dice / count;
  }
  return m;
}

SegmentationMetrics confusion_and_seg_metrics(const tiles::ClassMap& pred, const tiles::ClassMap& truth,
                                              bool foreground_only) {
  if (pred.n_classes != truth.n_classes) throw Error(ErrorKind::shape_mismatch, "class counts differ");
  ConfusionAccumulator acc(truth.n_classes);
  acc.add(pred, truth);
  return metrics_from_confusion(acc.confusion(), foreground_only);
}

std::vector<std::vector<double>> normalize_rows(const Confusion& confusion) {
  std::vector<std::vector<double>> out(confusion.size(), std::vector<double>(confusion.size(), 0.0));
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    auto row_sum = std::accumulate(confusion[r].begin(), confusion[r].end(), std::uint64_t{0});
    if (row_sum == 0) continue;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
      out[r][c] = static_cast<double>(confusion[r][c]) / static_cast<double>(row_sum);
    }
  }
  return out;
}

namespace {

void check_totals(std::span<const double> truth, std::span<const double> pred, const char* what) {
  if (truth.empty()) throw Error(ErrorKind::invalid_argument, std::string(what) + ": need at least one sample");
  if (truth.size() != pred.size()) {
    throw Error(ErrorKind::shape_mismatch, std::string(what) + ": truth and prediction lengths differ");
  }
}

}  // namespace

double nmbe(std::span<const double> truth_totals, std::span<const double> pred_totals) {
  check_totals(truth_totals, pred_totals, "nmbe");
  double bias = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < truth_totals.size(); ++i) {
    bias += pred_totals[i] - truth_totals[i];
    sum += truth_totals[i];
  }
  if (sum == 0.0) throw Error(ErrorKind::invalid_argument, "nmbe: ground-truth sum is zero");
  return bias / sum * 100.0;
}

double cvrmse(std::span<const double> truth_totals, std::span<const double> pred_totals) {
  check_totals(truth_totals, pred_totals, "cvrmse");
  double sq = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < truth_totals.size(); ++i) {
    double d = pred_totals[i] - truth_totals[i];
    sq += d * d;
    sum += truth_totals[i];
  }
  const auto n = static_cast<double>(truth_totals.size());
  double mean = sum / n;
  if (mean == 0.0) throw Error(ErrorKind::invalid_argument, "cvrmse: ground-truth mean is zero");
  return std::sqrt(sq / n) / mean * 100.0;
}

const char* to_string(Verdict verdict) {
  return verdict == Verdict::calibrated ? "calibrated" : "uncalibrated";
}

Verdict ashrae_verdict(double nmbe_percent, double cvrmse_percent) {
  bool ok = std::abs(nmbe_percent) <= kAshraeNmbeLimit && cvrmse_percent <= kAshraeCvrmseLimit;
  return ok ? Verdict::calibrated : Verdict::uncalibrated;
}

Grid<double> reconstruct_energy(const tiles::ClassMap& pred, std::span<const double> representative_log) {
  if (representative_log.size() < static_cast<std::size_t>(pred.n_classes)) {
    throw Error(ErrorKind::invalid_argument, "reconstruct_energy: missing bin statistics");
  }
  Grid<double> out(pred.labels.height(), pred.labels.width(), 1, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint8_t c = pred.labels[i];
    if (c >= pred.n_classes) throw Error(ErrorKind::invalid_argument, "reconstruct_energy: label out of range");
    out[i] = c == 0 ? 0.0 : std::expm1(representative_log[c]);
  }
  return out;
}

}  // namespace sense::metrics
