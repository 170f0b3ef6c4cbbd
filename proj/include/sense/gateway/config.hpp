#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

namespace sense::gateway {

struct GatewayConfig {
  std::filesystem::path data_root = "data/tiles";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "out";
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 1;
  std::size_t queue_depth = 64;
  std::size_t page_size = 50;
  // When set, mutating requests must carry it in the X-Sense-Token header.
  std::string auth_token;

  std::filesystem::path backbone_path() const { return checkpoint_dir / "backbone.pt"; }
  std::filesystem::path control_path() const { return checkpoint_dir / "control.pt"; }
  std::filesystem::path head_path(const std::string& kind) const { return checkpoint_dir / ("head_" + kind + ".pt"); }
  std::filesystem::path bins_path() const { return checkpoint_dir / "bins.json"; }
};

nlohmann::json to_json(const GatewayConfig& c);
// Unknown keys are rejected so typos surface.
GatewayConfig config_from_json(const nlohmann::json& j);

using EnvLookup = std::function<const char*(const char*)>;

// SENSE_DATA_ROOT, SENSE_CHECKPOINT_DIR, SENSE_OUTPUT_DIR and SENSE_PORT
// override the corresponding fields.
void apply_env_overrides(GatewayConfig& c, const EnvLookup& env = [](const char* k) { return std::getenv(k); });

// Defaults, then the file (if any), then the environment.
GatewayConfig load_config(const std::optional<std::filesystem::path>& path,
                          const EnvLookup& env = [](const char* k) { return std::getenv(k); });

}  // namespace sense::gateway
