#include "sense/tilestore/transform.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sense::tiles {

Grid<double> log1p_transform(const Grid<double>& raw_kbtu) {
  std::size_t bad = 0;
  for (double v : raw_kbtu.values()) {
    if (v == static_cast<double>(kEnergyNull)) continue;
    if (!std::isfinite(v) || v < 0.0) ++bad;
  }
  if (bad > 0) {
    throw Error(ErrorKind::invalid_argument,
                "log1p_transform: " + std::to_string(bad) + " pixel(s) negative or non-finite");
  }
  Grid<double> out(raw_kbtu.height(), raw_kbtu.width(), raw_kbtu.channels());
  for (std::size_t i = 0; i < raw_kbtu.size(); ++i) {
    double v = raw_kbtu[i];
    out[i] = v == static_cast<double>(kEnergyNull) ? v : std::log1p(v);
  }
  return out;
}

Grid<double> expm1_transform(const Grid<double>& log_values) {
  Grid<double> out(log_values.height(), log_values.width(), log_values.channels());
  for (std::size_t i = 0; i < log_values.size(); ++i) {
    double v = log_values[i];
    out[i] = v == static_cast<double>(kEnergyNull) ? v : std::expm1(v);
  }
  return out;
}

int class_count(DiscretizationScheme scheme) {
  return scheme == DiscretizationScheme::height_quintile_4 ? 5 : 4;
}

ClassSource class_source(DiscretizationScheme scheme) {
  return scheme == DiscretizationScheme::height_quintile_4 ? ClassSource::height : ClassSource::energy;
}

std::vector<double> percentile_levels(DiscretizationScheme scheme) {
  if (scheme == DiscretizationScheme::height_quintile_4) return {25.0, 50.0, 75.0};
  return {33.0, 66.0};
}

double percentile_linear(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::degenerate, "percentile of empty sample");
  double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

BinEdges fit_bin_edges(std::span<const float> values, DiscretizationScheme scheme) {
  std::vector<double> positives;
  positives.reserve(values.size());
  for (float v : values) {
    if (std::isnan(v)) throw Error(ErrorKind::invalid_argument, "discretize: NaN present");
    if (v > 0.0f) positives.push_back(v);
  }
  BinEdges bins;
  bins.scheme = scheme;
  if (positives.empty()) {
    bins.degenerate = true;
    return bins;
  }
  std::sort(positives.begin(), positives.end());
  const int needed = class_count(scheme) - 1;
  std::size_t distinct = std::set<double>(positives.begin(), positives.end()).size();
  if (distinct < static_cast<std::size_t>(needed)) {
    throw Error(ErrorKind::degenerate, "discretize: need at least " + std::to_string(needed) +
                                           " distinct positive values, found " + std::to_string(distinct));
  }
  for (double p : percentile_levels(scheme)) bins.edges.push_back(percentile_linear(positives, p));
  for (std::size_t i = 1; i < bins.edges.size(); ++i) {
    if (!(bins.edges[i] > bins.edges[i - 1])) {
      throw Error(ErrorKind::degenerate, "discretize: tied bin edges (too many repeated values)");
    }
  }
  return bins;
}

std::uint8_t classify(double value, const std::vector<double>& edges) {
  if (!(value > 0.0)) return 0;
  auto above = std::upper_bound(edges.begin(), edges.end(), value) - edges.begin();
  return static_cast<std::uint8_t>(above + 1);
}

ClassMap apply_bins(const Grid<float>& values, const BinEdges& bins) {
  ClassMap map;
  map.n_classes = class_count(bins.scheme);
  map.source = class_source(bins.scheme);
  map.bin_edges = bins.edges;
  map.degenerate = bins.degenerate;
  map.percentile_method = bins.percentile_method;
  map.labels = Grid<std::uint8_t>(values.height(), values.width(), 1, 0);
  for (std::size_t y = 0; y < values.height(); ++y) {
    for (std::size_t x = 0; x < values.width(); ++x) {
      float v = values.at(y, x);
      if (std::isnan(v)) throw Error(ErrorKind::invalid_argument, "discretize: NaN present");
      if (v > 0.0f && bins.degenerate) {
        throw Error(ErrorKind::degenerate, "discretize: positive value but degenerate bin edges");
      }
      map.labels.at(y, x) = classify(v, bins.edges);
    }
  }
  return map;
}

ClassMap discretize(const Grid<float>& values, DiscretizationScheme scheme) {
  if (values.channels() != 1) throw Error(ErrorKind::shape_mismatch, "discretize: expected one channel");
  return apply_bins(values, fit_bin_edges(values.values(), scheme));
}

std::vector<double> bin_medians(std::span<const float> values, const BinEdges& bins) {
  const int n = class_count(bins.scheme);
  std::vector<std::vector<double>> members(static_cast<std::size_t>(n));
  for (float v : values) {
    if (v > 0.0f) members[classify(v, bins.edges)].push_back(v);
  }
  std::vector<double> medians(static_cast<std::size_t>(n), 0.0);
  for (int c = 1; c < n; ++c) {
    auto& m = members[static_cast<std::size_t>(c)];
    if (m.empty()) {
      throw Error(ErrorKind::degenerate, "bin_medians: class " + std::to_string(c) + " has no members");
    }
    std::sort(m.begin(), m.end());
    medians[static_cast<std::size_t>(c)] = percentile_linear(m, 50.0);
  }
  return medians;
}

}  // namespace sense::tiles
