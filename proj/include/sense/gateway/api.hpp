#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sense/gateway/config.hpp"
#include "sense/gateway/jobs.hpp"
#include "sense/gateway/pipeline.hpp"

namespace httplib {
class Server;
}

namespace sense::gateway {

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct FieldError {
  std::string field;
  std::string message;
};

// Thrown by payload parsing; rendered as 422 with one entry per field.
class PayloadError : public std::runtime_error {
 public:
  explicit PayloadError(std::vector<FieldError> fields);
  const std::vector<FieldError>& fields() const { return fields_; }

 private:
  std::vector<FieldError> fields_;
};

// POST /jobs body -> generation request at the given tile resolution.
synthlab::GenerationRequest parse_job_payload(const nlohmann::json& body, std::size_t resolution);
// SHA-256 of the canonical (sorted-key) JSON text, for idempotency checks.
std::string payload_fingerprint(const nlohmann::json& body);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

int http_status(ErrorKind kind);

class Api {
 public:
  // `generator` may be null, in which case generation endpoints answer 503.
  Api(GatewayConfig config, std::shared_ptr<synthlab::AnnotatingGenerator> generator);
  ~Api();

  // Loads checkpoints from config.checkpoint_dir; refuses to start on a
  // digest mismatch. Missing checkpoints leave generation disabled.
  static std::unique_ptr<Api> from_config(const GatewayConfig& config);

  HttpResponse handle(const HttpRequest& request);
  JobQueue& jobs() { return *jobs_; }
  const GatewayConfig& config() const { return config_; }

 private:
  HttpResponse post_job(const HttpRequest& r);
  HttpResponse get_job(const std::string& id);
  HttpResponse get_job_layer(const std::string& id, const std::string& layer);
  HttpResponse list_tiles(const HttpRequest& r);
  HttpResponse get_tile_layer(const std::string& id, const std::string& layer);
  HttpResponse evaluate(const HttpRequest& r);
  HttpResponse health();

  GatewayConfig config_;
  std::shared_ptr<synthlab::AnnotatingGenerator> generator_;
  std::size_t resolution_ = 64;
  tiles::TileStore store_;
  std::unique_ptr<JobQueue> jobs_;
};

// httplib server routing every request through `api`.
std::unique_ptr<httplib::Server> make_server(Api& api);
// Blocks until the server stops.
void serve(Api& api);

}  // namespace sense::gateway
