#include "sense/tilestore/tile.hpp"

#include <cmath>

namespace sense {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::io: return "io";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::digest_mismatch: return "digest_mismatch";
    case ErrorKind::leakage: return "leakage";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::uninitialized: return "uninitialized";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::busy: return "busy";
  }
  return "unknown";
}

}  // namespace sense

namespace sense::tiles {

const char* to_string(ConstraintChannel channel) {
  switch (channel) {
    case ConstraintChannel::water: return "water";
    case ConstraintChannel::railway: return "railway";
    case ConstraintChannel::major_road: return "major_road";
  }
  return "unknown";
}

ConstraintChannel constraint_channel_from_string(const std::string& name) {
  if (name == "water") return ConstraintChannel::water;
  if (name == "railway") return ConstraintChannel::railway;
  if (name == "major_road" || name == "road") return ConstraintChannel::major_road;
  throw Error(ErrorKind::invalid_argument, "unknown constraint channel '" + name + "'");
}

const char* to_string(QcStatus status) {
  switch (status) {
    case QcStatus::accepted: return "accepted";
    case QcStatus::rejected: return "rejected";
    case QcStatus::unreviewed: return "unreviewed";
  }
  return "unknown";
}

QcStatus qc_status_from_string(const std::string& name) {
  if (name == "accepted") return QcStatus::accepted;
  if (name == "rejected") return QcStatus::rejected;
  if (name == "unreviewed") return QcStatus::unreviewed;
  throw Error(ErrorKind::invalid_argument, "unknown qc status '" + name + "'");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unknown";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "unassigned" || name.empty()) return Split::unassigned;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + name + "'");
}

const char* to_string(ClassSource source) {
  return source == ClassSource::height ? "height" : "energy";
}

void DensityMetrics::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::invalid_argument, std::string(name) + " must be finite");
    }
    if (v < 0.0) {
      throw Error(ErrorKind::invalid_argument, std::string(name) + " must be >= 0");
    }
  };
  check(bcr, "bcr");
  check(bvd, "bvd");
  check(rd, "rd");
  if (bcr > 100.0) {
    throw Error(ErrorKind::invalid_argument, "bcr must be <= 100 (percent)");
  }
}

void Tile::validate() const {
  if (image.channels() != 3) {
    throw Error(ErrorKind::shape_mismatch, "tile " + tile_id + ": image must have 3 channels");
  }
  if (constraints.channels() != kConstraintChannels) {
    throw Error(ErrorKind::shape_mismatch, "tile " + tile_id + ": constraint mask must have 3 channels");
  }
  require_same_extent(image, constraints, "constraints");
  require_same_extent(image, height, "height");
  require_same_extent(image, energy, "energy");
  for (auto v : constraints.values()) {
    if (v > 1) throw Error(ErrorKind::invalid_argument, "tile " + tile_id + ": constraint values must be 0/1");
  }
  for (auto v : height.values()) {
    if (!(v >= 0.0f) || !std::isfinite(v)) {
      throw Error(ErrorKind::invalid_argument, "tile " + tile_id + ": height must be finite and >= 0");
    }
  }
  density.validate();
}

}  // namespace sense::tiles
