#pragma once

#include <optional>
#include <string>

#include "sense/tilestore/tile.hpp"

namespace sense::tiles {

std::string render_prompt(const std::string& city, const DensityMetrics& density);

struct ParsedPrompt {
  std::string city;
  DensityMetrics density;
};

std::optional<ParsedPrompt> parse_prompt(const std::string& prompt);

}  // namespace sense::tiles
