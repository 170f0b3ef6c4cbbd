#pragma once

#include <span>
#include <vector>

#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

// Elementwise log1p of raw kBtu. Null sentinels pass through unchanged.
// Throws if any value is negative (other than the sentinel) or non-finite.
Grid<double> log1p_transform(const Grid<double>& raw_kbtu);
Grid<double> expm1_transform(const Grid<double>& log_values);

enum class DiscretizationScheme { height_quintile_4, energy_tertile };

int class_count(DiscretizationScheme scheme);
ClassSource class_source(DiscretizationScheme scheme);
std::vector<double> percentile_levels(DiscretizationScheme scheme);

// Percentile (p in [0, 100]) by linear interpolation between order
// statistics of an ascending sample (numpy's default method).
double percentile_linear(std::span<const double> sorted, double p);

struct BinEdges {
  DiscretizationScheme scheme = DiscretizationScheme::height_quintile_4;
  std::vector<double> edges;
  bool degenerate = false;
  std::string percentile_method = "linear";
};

// Fits bin edges over the positive values of `values`. Zero (background)
// and null sentinels are excluded. An input without positive values yields
// a degenerate edge set; fewer distinct positives than n_classes - 1, tied
// edges, or NaN raise Error.
BinEdges fit_bin_edges(std::span<const float> values, DiscretizationScheme scheme);

// Class of a single value under fixed edges: 0 for background, else the
// number of edges <= v, plus one.
std::uint8_t classify(double value, const std::vector<double>& edges);

ClassMap apply_bins(const Grid<float>& values, const BinEdges& bins);

// Fit on the grid itself, then apply.
ClassMap discretize(const Grid<float>& values, DiscretizationScheme scheme);

// Median of the positive values that fall into each class under `bins`
// (index 0 is background and fixed to 0). Used to invert class maps back
// to physical values.
std::vector<double> bin_medians(std::span<const float> values, const BinEdges& bins);

}  // namespace sense::tiles
