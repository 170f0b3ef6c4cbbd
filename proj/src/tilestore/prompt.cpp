#include "sense/tilestore/prompt.hpp"

#include <cstdio>
#include <regex>

namespace sense::tiles {

std::string render_prompt(const std::string& city, const DensityMetrics& density) {
  char numbers[512];
  std::snprintf(numbers, sizeof numbers,
                ". The Building Coverage Ratio in this area is %.2f %%. The Building Volume Density is "
                "%.2f cubic meters per square meter. The Road Density is %.2f kilometers per square "
                "kilometer.",
                density.bcr, density.bvd, density.rd);
  return "Satellite imagery of " + city + numbers;
}

std::optional<ParsedPrompt> parse_prompt(const std::string& prompt) {
  static const std::regex pattern(
      R"(^Satellite imagery of (.+)\. The Building Coverage Ratio in this area is (-?[0-9]+\.[0-9]+) %\. )"
      R"(The Building Volume Density is (-?[0-9]+\.[0-9]+) cubic meters per square meter\. )"
      R"(The Road Density is (-?[0-9]+\.[0-9]+) kilometers per square kilometer\.$)");
  std::smatch m;
  if (!std::regex_match(prompt, m, pattern)) return std::nullopt;
  ParsedPrompt out;
  out.city = m[1].str();
  out.density.bcr = std::stod(m[2].str());
  out.density.bvd = std::stod(m[3].str());
  out.density.rd = std::stod(m[4].str());
  return out;
}

}  // namespace sense::tiles
