#include "sense/gateway/config.hpp"

#include <fstream>
#include <set>

#include "sense/error.hpp"

namespace sense::gateway {

using nlohmann::json;

json to_json(const GatewayConfig& c) {
  return json{{"data_root", c.data_root.string()},
              {"checkpoint_dir", c.checkpoint_dir.string()},
              {"output_dir", c.output_dir.string()},
              {"host", c.host},
              {"port", c.port},
              {"workers", c.workers},
              {"queue_depth", c.queue_depth},
              {"page_size", c.page_size},
              {"auth_token", c.auth_token}};
}

GatewayConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_argument, "config: expected a JSON object");
  static const std::set<std::string> known{"data_root", "checkpoint_dir", "output_dir", "host",     "port",
                                           "workers",   "queue_depth",    "page_size",  "auth_token"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error(ErrorKind::invalid_argument, "config: unknown key '" + k + "'");
  }
  GatewayConfig c;
  try {
    c.data_root = j.value("data_root", c.data_root.string());
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.workers = j.value("workers", c.workers);
    c.queue_depth = j.value("queue_depth", c.queue_depth);
    c.page_size = j.value("page_size", c.page_size);
    c.auth_token = j.value("auth_token", c.auth_token);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(ErrorKind::invalid_argument, "config: port out of range");
  if (c.workers < 1) throw Error(ErrorKind::invalid_argument, "config: workers must be at least 1");
  if (c.queue_depth < 1) throw Error(ErrorKind::invalid_argument, "config: queue_depth must be at least 1");
  if (c.page_size < 1) throw Error(ErrorKind::invalid_argument, "config: page_size must be at least 1");
  return c;
}

void apply_env_overrides(GatewayConfig& c, const EnvLookup& env) {
  if (const char* v = env("SENSE_DATA_ROOT"); v && *v) c.data_root = v;
  if (const char* v = env("SENSE_CHECKPOINT_DIR"); v && *v) c.checkpoint_dir = v;
  if (const char* v = env("SENSE_OUTPUT_DIR"); v && *v) c.output_dir = v;
  if (const char* v = env("SENSE_PORT"); v && *v) {
    char* end = nullptr;
    long port = std::strtol(v, &end, 10);
    if (*end != '\0' || port < 0 || port > 65535) {
      throw Error(ErrorKind::invalid_argument, std::string("SENSE_PORT: not a port number: ") + v);
    }
    c.port = static_cast<int>(port);
  }
}

GatewayConfig load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env) {
  GatewayConfig c;
  if (path) {
    std::ifstream f(*path);
    if (!f) throw Error(ErrorKind::io, "cannot read config " + path->string());
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_argument, "config " + path->string() + ": " + e.what());
    }
    c = config_from_json(j);
  }
  apply_env_overrides(c, env);
  return c;
}

}  // namespace sense::gateway
