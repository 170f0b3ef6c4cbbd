#include "sense/tilestore/qc.hpp"

#include <fstream>
#include <sstream>
#include <vector>

namespace sense::tiles {

QcOverrides QcOverrides::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read QC override file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

QcOverrides QcOverrides::parse(const std::string& text) {
  QcOverrides out;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string id, verdict;
    if (!(fields >> id)) continue;
    if (!(fields >> verdict)) {
      throw Error(ErrorKind::invalid_argument, "QC override line " + std::to_string(lineno) + ": missing verdict");
    }
    QcStatus status = qc_status_from_string(verdict);
    if (status == QcStatus::unreviewed) {
      throw Error(ErrorKind::invalid_argument,
                  "QC override line " + std::to_string(lineno) + ": verdict must be accepted or rejected");
    }
    out.set(id, status);
  }
  return out;
}

std::optional<QcStatus> QcOverrides::lookup(const std::string& tile_id) const {
  if (auto it = verdicts_.find(tile_id); it != verdicts_.end()) return it->second;
  return std::nullopt;
}

std::size_t largest_null_component(const Grid<float>& energy) {
  const std::size_t h = energy.height(), w = energy.width();
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<std::size_t> stack;
  std::size_t best = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || !is_energy_null(energy.at(start / w, start % w))) continue;
    std::size_t count = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      std::size_t y = i / w, x = i % w;
      auto visit = [&](std::size_t yy, std::size_t xx) {
        std::size_t j = yy * w + xx;
        if (!seen[j] && is_energy_null(energy.at(yy, xx))) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (y > 0) visit(y - 1, x);
      if (y + 1 < h) visit(y + 1, x);
      if (x > 0) visit(y, x - 1);
      if (x + 1 < w) visit(y, x + 1);
    }
    best = std::max(best, count);
  }
  return best;
}

QcDecision qc_energy_layer(const Grid<float>& energy, double max_null_block_fraction) {
  QcDecision d;
  for (float v : energy.values()) {
    if (v != 0.0f) ++d.annotated_area;
  }
  if (d.annotated_area == 0) {
    d.status = QcStatus::rejected;
    d.reason = "no energy annotation";
    return d;
  }
  d.largest_null_block = largest_null_component(energy);
  d.largest_null_fraction = static_cast<double>(d.largest_null_block) / static_cast<double>(d.annotated_area);
  std::ostringstream why;
  why.precision(4);
  why << "largest null block " << d.largest_null_block << " px = " << d.largest_null_fraction
      << " of annotated area (threshold " << max_null_block_fraction << ")";
  d.reason = why.str();
  d.status = d.largest_null_fraction > max_null_block_fraction ? QcStatus::rejected : QcStatus::accepted;
  return d;
}

QcDecision qc_filter(const Tile& tile, double max_null_block_fraction, const QcOverrides* overrides) {
  QcDecision d = qc_energy_layer(tile.energy, max_null_block_fraction);
  if (overrides) {
    if (auto verdict = overrides->lookup(tile.tile_id)) {
      d.status = *verdict;
      d.reason = "expert override: " + std::string(to_string(*verdict)) + " (heuristic: " + d.reason + ")";
      d.overridden = true;
    }
  }
  return d;
}

}  // namespace sense::tiles
