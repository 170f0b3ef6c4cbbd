#include "sense/energymetrics/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sense/tilestore/transform.hpp"

namespace sense::metrics {

const std::vector<std::string>& energy_class_names() {
  static const std::vector<std::string> names = {"Background", "Low consumption", "Medium consumption",
                                                 "High consumption"};
  return names;
}

const std::vector<std::string>& height_class_names() {
  static const std::vector<std::string> names = {"Background", "Low-rise", "Mid-rise", "High-rise", "Tall"};
  return names;
}

CalibrationReport evaluate_energy(const std::vector<EnergyPair>& pairs, const EnergyBins& bins, bool foreground_only) {
  if (pairs.empty()) throw Error(ErrorKind::invalid_argument, "evaluate_energy: no tiles");
  if (bins.representative_log.size() != 4 || bins.edges.size() != 2) {
    throw Error(ErrorKind::invalid_argument, "evaluate_energy: energy bins need 2 edges and 4 representatives");
  }
  tiles::BinEdges edges{tiles::DiscretizationScheme::energy_tertile, bins.edges, false, "linear"};
  ConfusionAccumulator acc(4);
  CalibrationReport report;
  report.n_tiles = pairs.size();
  report.class_names = energy_class_names();
  std::vector<double> truth_log_totals, pred_log_totals;
  for (const auto& pair : pairs) {
    require_same_extent(pair.pred.labels, pair.truth_log, "evaluate_energy");
    tiles::ClassMap truth = tiles::apply_bins(pair.truth_log, edges);
    Grid<std::uint8_t> annotated(truth.labels.height(), truth.labels.width(), 1, 1);
    for (std::size_t i = 0; i < annotated.size(); ++i) annotated[i] = tiles::is_energy_null(pair.truth_log[i]) ? 0 : 1;
    if (pair.pred.n_classes != 4) throw Error(ErrorKind::shape_mismatch, "evaluate_energy: prediction must have 4 classes");
    acc.add(pair.pred.labels, truth.labels, &annotated);
    Grid<double> pred_kbtu = reconstruct_energy(pair.pred, bins.representative_log);
    double t = 0.0, p = 0.0, tl = 0.0, pl = 0.0;
    for (std::size_t i = 0; i < pred_kbtu.size(); ++i) {
      float v = pair.truth_log[i];
      if (tiles::is_energy_null(v)) continue;
      t += std::expm1(static_cast<double>(v));
      tl += v;
      p += pred_kbtu[i];
      pl += bins.representative_log[pair.pred.labels[i]];
    }
    report.truth_totals.push_back(t);
    report.pred_totals.push_back(p);
    truth_log_totals.push_back(tl);
    pred_log_totals.push_back(pl);
  }
  report.segmentation = metrics_from_confusion(acc.confusion(), foreground_only);
  report.nmbe = nmbe(report.truth_totals, report.pred_totals);
  report.cvrmse = cvrmse(report.truth_totals, report.pred_totals);
  report.nmbe_log = nmbe(truth_log_totals, pred_log_totals);
  report.cvrmse_log = cvrmse(truth_log_totals, pred_log_totals);
  report.verdict = ashrae_verdict(report.nmbe, report.cvrmse);
  return report;
}

nlohmann::json to_json(const SegmentationMetrics& m, const std::vector<std::string>& class_names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& cm = m.per_class[c];
    per_class.push_back({{"class_id", c},
                         {"name", c < class_names.size() ? class_names[c] : std::to_string(c)},
                         {"precision", cm.precision},
                         {"recall", cm.recall},
                         {"iou", cm.iou},
                         {"dice", cm.dice},
                         {"support", cm.support},
                         {"present", cm.present}});
  }
  return {{"accuracy", m.accuracy},
          {"miou", m.miou},
          {"mean_precision", m.mean_precision},
          {"mean_recall", m.mean_recall},
          {"mean_dice", m.mean_dice},
          {"per_class", per_class},
          {"confusion", m.confusion},
          {"confusion_normalized", normalize_rows(m.confusion)}};
}

nlohmann::json to_json(const CalibrationReport& report) {
  return {{"n_tiles", report.n_tiles},
          {"nmbe", report.nmbe},
          {"cvrmse", report.cvrmse},
          {"nmbe_log", report.nmbe_log},
          {"cvrmse_log", report.cvrmse_log},
          {"verdict", to_string(report.verdict)},
          {"ashrae_limits", {{"nmbe", kAshraeNmbeLimit}, {"cvrmse", kAshraeCvrmseLimit}}},
          {"segmentation", to_json(report.segmentation, report.class_names)},
          {"truth_totals_kbtu", report.truth_totals},
          {"pred_totals_kbtu", report.pred_totals}};
}

std::string segmentation_table(const SegmentationMetrics& m, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-20s %9s %9s %9s %9s\n", "ClassID", "Description", "Precision", "Recall",
                "IoU", "Dice");
  out << line;
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& cm = m.per_class[c];
    std::snprintf(line, sizeof line, "%-8zu %-20s %9.4f %9.4f %9.4f %9.4f\n", c,
                  c < class_names.size() ? class_names[c].c_str() : "", cm.precision, cm.recall, cm.iou, cm.dice);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-8s %-20s %9.4f %9.4f %9.4f %9.4f\n", "Overall",
                ("Accuracy " + std::to_string(m.accuracy).substr(0, 6)).c_str(), m.mean_precision, m.mean_recall,
                m.miou, m.mean_dice);
  out << line;
  return out.str();
}

std::string summary_table(const CalibrationReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-8s %-8s %-10s %-10s %-12s %-12s %s\n", "Tiles", "Acc", "mIoU", "NMBE",
                "CVRMSE", "NMBE(log)", "CVRMSE(log)", "ASHRAE");
  out << line;
  std::snprintf(line, sizeof line, "%-10zu %-8.4f %-8.4f %+9.2f%% %9.2f%% %+11.2f%% %11.2f%% %s\n", report.n_tiles,
                report.segmentation.accuracy, report.segmentation.miou, report.nmbe, report.cvrmse, report.nmbe_log,
                report.cvrmse_log, to_string(report.verdict));
  out << line << '\n' << segmentation_table(report.segmentation, report.class_names);
  return out.str();
}

tiles::Bytes confusion_png(const Confusion& confusion, std::size_t cell_px) {
  auto norm = normalize_rows(confusion);
  const std::size_t n = norm.size();
  Grid<std::uint8_t> img(n * cell_px, n * cell_px, 1, 0);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      img.at(y, x) = static_cast<std::uint8_t>(std::lround(norm[y / cell_px][x / cell_px] * 255.0));
    }
  }
  return tiles::encode_png(img);
}

}  // namespace sense::metrics
