#include "sense/gateway/api.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <sstream>

#include <httplib.h>

#include "sense/diffcore/digest.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/raster_io.hpp"
#include "sense/tilestore/rasterize.hpp"

namespace sense::gateway {

using nlohmann::json;

namespace {

constexpr const char* kFloatRasterType = "application/x-sense-f32";

std::string join_fields(const std::vector<FieldError>& fields) {
  std::string s = "invalid payload";
  for (const auto& f : fields) s += "; " + f.field + ": " + f.message;
  return s;
}

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump(2) + "\n"};
}

HttpResponse error_response(int status, const std::string& kind, const std::string& message,
                            const std::vector<FieldError>& fields = {}) {
  json err{{"kind", kind}, {"message", message}};
  if (!fields.empty()) {
    json f = json::array();
    for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
    err["fields"] = f;
  }
  return json_response(status, json{{"error", err}});
}

HttpResponse bytes_response(const std::string& content_type, const tiles::Bytes& bytes) {
  return {200, content_type, std::string(bytes.begin(), bytes.end())};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

Grid<std::uint8_t> class_png_samples(const tiles::ClassMap& m) { return m.labels; }

std::size_t parse_positive(const std::map<std::string, std::string>& q, const std::string& key, std::size_t fallback) {
  auto it = q.find(key);
  if (it == q.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size() || v < 1) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw PayloadError(std::vector<FieldError>{{key, "must be a positive integer"}});
  }
}

std::optional<double> number_field(const json& obj, const std::string& key, const std::string& path,
                                   std::vector<FieldError>& errors) {
  if (!obj.contains(key)) {
    errors.push_back({path, "is required"});
    return std::nullopt;
  }
  const auto& v = obj.at(key);
  if (!v.is_number()) {
    errors.push_back({path, "must be a number"});
    return std::nullopt;
  }
  const double d = v.get<double>();
  if (!std::isfinite(d)) {
    errors.push_back({path, "must be finite"});
    return std::nullopt;
  }
  return d;
}

void parse_density(const json& body, tiles::DensityMetrics& out, std::vector<FieldError>& errors) {
  if (!body.contains("density") || !body["density"].is_object()) {
    errors.push_back({"density", "must be an object with bcr, bvd and rd"});
    return;
  }
  const auto& d = body["density"];
  if (auto v = number_field(d, "bcr", "density.bcr", errors)) {
    if (*v < 0.0 || *v > 100.0) {
      errors.push_back({"density.bcr", "bcr is a coverage percentage and must lie in [0, 100]"});
    } else {
      out.bcr = *v;
    }
  }
  if (auto v = number_field(d, "bvd", "density.bvd", errors)) {
    if (*v < 0.0) {
      errors.push_back({"density.bvd", "bvd must be >= 0"});
    } else {
      out.bvd = *v;
    }
  }
  if (auto v = number_field(d, "rd", "density.rd", errors)) {
    if (*v < 0.0) {
      errors.push_back({"density.rd", "rd must be >= 0"});
    } else {
      out.rd = *v;
    }
  }
}

std::optional<tiles::LonLat> parse_point(const json& p) {
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) return std::nullopt;
  return tiles::LonLat{p[0].get<double>(), p[1].get<double>()};
}

void parse_constraints(const json& body, std::size_t resolution, Grid<std::uint8_t>& out,
                       std::vector<FieldError>& errors) {
  if (!body.contains("constraints") || !body["constraints"].is_object()) {
    errors.push_back({"constraints", "must be an object with png_base64 or geometries"});
    return;
  }
  const auto& c = body["constraints"];
  if (c.contains("png_base64")) {
    if (!c["png_base64"].is_string()) {
      errors.push_back({"constraints.png_base64", "must be a string"});
      return;
    }
    try {
      const auto raw = base64_decode(c["png_base64"].get<std::string>());
      auto px = tiles::decode_png(tiles::Bytes(raw.begin(), raw.end()));
      if (px.height() != resolution || px.width() != resolution || px.channels() != tiles::kConstraintChannels) {
        errors.push_back({"constraints.png_base64", "mask must be " + std::to_string(resolution) + "x" +
                                                        std::to_string(resolution) + " with 3 channels"});
        return;
      }
      out = tiles::mask_from_png_samples(px);
    } catch (const Error& e) {
      errors.push_back({"constraints.png_base64", e.what()});
    }
    return;
  }
  if (!c.contains("geometries") || !c["geometries"].is_array()) {
    errors.push_back({"constraints", "must contain png_base64 or a geometries array"});
    return;
  }
  tiles::GeoBox bbox{0.0, 0.0, 1.0, 1.0};
  if (c.contains("bbox")) {
    const auto& b = c["bbox"];
    if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& x) { return x.is_number(); })) {
      errors.push_back({"constraints.bbox", "must be [min_lon, min_lat, max_lon, max_lat]"});
      return;
    }
    bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (bbox.degenerate()) {
      errors.push_back({"constraints.bbox", "max_lon must exceed min_lon and max_lat must exceed min_lat"});
      return;
    }
  }
  std::vector<tiles::Geometry> features;
  std::vector<std::size_t> source_index;
  const auto& geoms = c["geometries"];
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    const auto& g = geoms[i];
    const std::string path = "constraints.geometries[" + std::to_string(i) + "]";
    if (!g.is_object()) {
      errors.push_back({path, "must be an object"});
      continue;
    }
    tiles::Geometry geo;
    try {
      geo.channel = tiles::constraint_channel_from_string(g.value("channel", std::string{}));
    } catch (const Error&) {
      errors.push_back({path + ".channel", "must be one of water, railway, major_road"});
      continue;
    }
    const auto kind = g.value("kind", std::string{});
    if (kind == "line") {
      geo.kind = tiles::GeometryKind::line;
    } else if (kind == "polygon") {
      geo.kind = tiles::GeometryKind::polygon;
    } else {
      errors.push_back({path + ".kind", "must be line or polygon"});
      continue;
    }
    if (g.contains("width_px")) {
      if (!g["width_px"].is_number()) {
        errors.push_back({path + ".width_px", "must be a number"});
        continue;
      }
      geo.width_px = g["width_px"].get<double>();
    }
    if (!g.contains("points") || !g["points"].is_array()) {
      errors.push_back({path + ".points", "must be an array of [lon, lat] pairs"});
      continue;
    }
    bool ok = true;
    for (const auto& p : g["points"]) {
      auto ll = parse_point(p);
      if (!ll) {
        ok = false;
        break;
      }
      geo.points.push_back(*ll);
    }
    if (!ok) {
      errors.push_back({path + ".points", "must be an array of [lon, lat] pairs"});
      continue;
    }
    features.push_back(std::move(geo));
    source_index.push_back(i);
  }
  auto r = tiles::rasterize_constraints(features, bbox, {resolution, resolution});
  for (const auto& fe : r.errors) {
    errors.push_back({"constraints.geometries[" + std::to_string(source_index.at(fe.index)) + "]", fe.reason});
  }
  out = std::move(r.mask);
}

json provenance_json(const synthlab::Provenance& p) {
  return json{{"generator_digest", p.generator_digest},
              {"control_digest", p.control_digest},
              {"height_head_digest", p.height_head_digest},
              {"energy_head_digest", p.energy_head_digest},
              {"seed", p.seed},
              {"source_tile_id", p.source_tile_id},
              {"t_star", p.t_star}};
}

}  // namespace

PayloadError::PayloadError(std::vector<FieldError> fields)
    : std::runtime_error(join_fields(fields)), fields_(std::move(fields)) {}

synthlab::GenerationRequest parse_job_payload(const json& body, std::size_t resolution) {
  if (!body.is_object()) throw PayloadError(std::vector<FieldError>{{"body", "must be a JSON object"}});
  std::vector<FieldError> errors;
  synthlab::GenerationRequest req;
  if (!body.contains("city") || !body["city"].is_string() || body["city"].get<std::string>().empty()) {
    errors.push_back({"city", "must be a non-empty string"});
  } else {
    req.city = body["city"].get<std::string>();
  }
  if (!body.contains("seed") || !body["seed"].is_number_unsigned()) {
    errors.push_back({"seed", "must be a non-negative integer"});
  } else {
    req.seed = body["seed"].get<std::uint64_t>();
  }
  if (body.contains("source_tile_id")) {
    if (!body["source_tile_id"].is_string()) {
      errors.push_back({"source_tile_id", "must be a string"});
    } else {
      req.source_tile_id = body["source_tile_id"].get<std::string>();
    }
  }
  parse_density(body, req.density, errors);
  parse_constraints(body, resolution, req.constraints, errors);
  if (!errors.empty()) throw PayloadError(std::move(errors));
  return req;
}

std::string payload_fingerprint(const json& body) {
  const auto text = body.dump();
  return diffcore::sha256_hex(text.data(), text.size());
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  }
  if (clean.size() % 4 != 0) throw Error(ErrorKind::invalid_argument, "base64 length must be a multiple of 4");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw Error(ErrorKind::invalid_argument, "invalid base64");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::shape_mismatch:
    case ErrorKind::degenerate:
    case ErrorKind::leakage:
      return 422;
    case ErrorKind::not_found:
      return 404;
    case ErrorKind::conflict:
    case ErrorKind::digest_mismatch:
      return 409;
    case ErrorKind::busy:
    case ErrorKind::uninitialized:
      return 503;
    case ErrorKind::io:
      return 500;
  }
  return 500;
}

Api::Api(GatewayConfig config, std::shared_ptr<synthlab::AnnotatingGenerator> generator)
    : config_(std::move(config)), generator_(std::move(generator)), store_(config_.data_root) {
  if (generator_) resolution_ = static_cast<std::size_t>(generator_->backbone().config.image_size);
  auto gen = generator_;
  jobs_ = std::make_unique<JobQueue>(
      [gen](const synthlab::GenerationRequest& r) {
        if (!gen) throw Error(ErrorKind::uninitialized, "no generator loaded");
        return gen->generate_one(r);
      },
      config_.workers, config_.queue_depth);
}

Api::~Api() { jobs_->shutdown(); }

std::unique_ptr<Api> Api::from_config(const GatewayConfig& config) {
  const std::vector<std::filesystem::path> paths{config.backbone_path(), config.control_path(),
                                                 config.head_path("height"), config.head_path("energy")};
  std::vector<std::string> missing;
  for (const auto& p : paths) {
    if (!std::filesystem::exists(p)) missing.push_back(p.string());
  }
  std::shared_ptr<synthlab::AnnotatingGenerator> gen;
  if (missing.empty()) {
    gen = synthlab::AnnotatingGenerator::load(paths[0], paths[1], paths[2], paths[3]);
  } else if (missing.size() < paths.size()) {
    std::string msg = "incomplete checkpoint set, missing:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorKind::not_found, msg);
  }
  return std::make_unique<Api>(config, std::move(gen));
}

HttpResponse Api::handle(const HttpRequest& r) {
  try {
    const auto parts = split_path(r.path);
    if (r.method == "POST" && !config_.auth_token.empty()) {
      auto it = r.headers.find("x-sense-token");
      if (it == r.headers.end() || it->second != config_.auth_token) {
        return error_response(401, "unauthorized", "missing or wrong X-Sense-Token");
      }
    }
    if (r.method == "GET" && parts.size() == 1 && parts[0] == "health") return health();
    if (!parts.empty() && parts[0] == "jobs") {
      if (r.method == "POST" && parts.size() == 1) return post_job(r);
      if (r.method == "GET" && parts.size() == 2) return get_job(parts[1]);
      if (r.method == "GET" && parts.size() == 4 && parts[2] == "layers") return get_job_layer(parts[1], parts[3]);
    }
    if (!parts.empty() && parts[0] == "tiles" && r.method == "GET") {
      if (parts.size() == 1) return list_tiles(r);
      if (parts.size() == 3) return get_tile_layer(parts[1], parts[2]);
    }
    if (r.method == "POST" && parts.size() == 1 && parts[0] == "evaluate") return evaluate(r);
    return error_response(404, "not_found", "no route for " + r.method + " " + r.path);
  } catch (const PayloadError& e) {
    return error_response(422, "invalid_payload", e.what(), e.fields());
  } catch (const json::exception& e) {
    return error_response(400, "malformed_json", e.what());
  } catch (const Error& e) {
    return error_response(http_status(e.kind()), to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

HttpResponse Api::post_job(const HttpRequest& r) {
  const auto body = json::parse(r.body);
  auto request = parse_job_payload(body, resolution_);
  if (!generator_) throw Error(ErrorKind::uninitialized, "generation is disabled: no checkpoints loaded");
  std::string key;
  if (auto it = r.headers.find("idempotency-key"); it != r.headers.end()) key = it->second;
  auto sub = jobs_->submit(std::move(request), key, payload_fingerprint(body));
  auto snap = jobs_->get(sub.id);
  return json_response(sub.created ? 202 : 200,
                       json{{"job_id", sub.id}, {"status", to_string(snap->status)}, {"url", "/jobs/" + sub.id}});
}

HttpResponse Api::get_job(const std::string& id) {
  auto snap = jobs_->get(id);
  if (!snap) throw Error(ErrorKind::not_found, "unknown job '" + id + "'");
  json j{{"job_id", snap->id}, {"status", to_string(snap->status)}};
  if (!snap->idempotency_key.empty()) j["idempotency_key"] = snap->idempotency_key;
  if (snap->status == JobStatus::failed) j["error"] = snap->error;
  if (snap->result) {
    const auto& t = *snap->result;
    json layers;
    for (const char* l : {"image", "constraints", "height", "energy", "height_classes", "energy_classes"}) {
      layers[l] = "/jobs/" + id + "/layers/" + l;
    }
    j["result"] = {{"tile_id", t.tile.tile_id},
                   {"city", t.tile.city},
                   {"digest", t.digest()},
                   {"resolution", {t.tile.image.height(), t.tile.image.width()}},
                   {"density", {{"bcr", t.tile.density.bcr}, {"bvd", t.tile.density.bvd}, {"rd", t.tile.density.rd}}},
                   {"provenance", provenance_json(t.provenance)},
                   {"layers", layers}};
  }
  return json_response(200, j);
}

HttpResponse Api::get_job_layer(const std::string& id, const std::string& layer) {
  auto snap = jobs_->get(id);
  if (!snap) throw Error(ErrorKind::not_found, "unknown job '" + id + "'");
  if (!snap->result) {
    throw Error(ErrorKind::not_found, "job '" + id + "' has no result (status " + to_string(snap->status) + ")");
  }
  const auto& t = *snap->result;
  if (layer == "image") return bytes_response("image/png", tiles::encode_png(tiles::to_rgb8(t.tile.image)));
  if (layer == "constraints") {
    return bytes_response("image/png", tiles::encode_png(tiles::mask_to_png_samples(t.tile.constraints)));
  }
  if (layer == "height") {
    return bytes_response(kFloatRasterType, tiles::encode_float_raster(t.tile.height, tiles::LayerKind::height));
  }
  if (layer == "energy") {
    return bytes_response(kFloatRasterType, tiles::encode_float_raster(t.tile.energy, tiles::LayerKind::energy));
  }
  if (layer == "height_classes") return bytes_response("image/png", tiles::encode_png(class_png_samples(t.height_classes)));
  if (layer == "energy_classes") return bytes_response("image/png", tiles::encode_png(class_png_samples(t.energy_classes)));
  throw Error(ErrorKind::not_found, "unknown layer '" + layer + "'");
}

HttpResponse Api::list_tiles(const HttpRequest& r) {
  const auto page = parse_positive(r.query, "page", 1);
  const auto page_size = std::min(parse_positive(r.query, "page_size", config_.page_size), config_.page_size);
  auto get = [&](const char* k) -> std::optional<std::string> {
    auto it = r.query.find(k);
    if (it == r.query.end()) return std::nullopt;
    return it->second;
  };
  const auto city = get("city");
  const auto split = get("split");
  const auto qc = get("qc");
  std::vector<tiles::ManifestEntry> matches;
  if (std::filesystem::exists(store_.manifest_path())) {
    for (const auto& e : store_.manifest()) {
      if (city && e.city != *city && tiles::city_slug(e.city) != *city) continue;
      if (split && to_string(e.split) != *split) continue;
      if (qc && to_string(e.qc) != *qc) continue;
      matches.push_back(e);
    }
  }
  json items = json::array();
  const std::size_t begin = (page - 1) * page_size;
  for (std::size_t i = begin; i < std::min(matches.size(), begin + page_size); ++i) {
    const auto& e = matches[i];
    items.push_back({{"tile_id", e.tile_id},
                     {"city", e.city},
                     {"split", to_string(e.split)},
                     {"qc", to_string(e.qc)},
                     {"url", "/tiles/" + e.tile_id + "/meta"}});
  }
  return json_response(200, json{{"page", page},
                                 {"page_size", page_size},
                                 {"total", matches.size()},
                                 {"pages", (matches.size() + page_size - 1) / page_size},
                                 {"items", items}});
}

HttpResponse Api::get_tile_layer(const std::string& id, const std::string& layer) {
  auto e = store_.find(id);
  if (!e) throw Error(ErrorKind::not_found, "unknown tile '" + id + "'");
  const auto dir = store_.tile_dir(e->city, e->tile_id);
  if (layer == "image") return bytes_response("image/png", tiles::read_file(dir / "image.png"));
  if (layer == "constraints") return bytes_response("image/png", tiles::read_file(dir / "constraints.png"));
  if (layer == "height") return bytes_response(kFloatRasterType, tiles::read_file(dir / "height.f32r"));
  if (layer == "energy") return bytes_response(kFloatRasterType, tiles::read_file(dir / "energy.f32r"));
  if (layer == "meta") return bytes_response("application/json", tiles::read_file(dir / "meta.json"));
  throw Error(ErrorKind::not_found, "unknown layer '" + layer + "'");
}

HttpResponse Api::evaluate(const HttpRequest& r) {
  const auto body = json::parse(r.body);
  std::vector<FieldError> errors;
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!body.is_object() || !body.contains("pairs") || !body["pairs"].is_array() || body["pairs"].empty()) {
    errors.push_back({"pairs", "must be a non-empty array of {pred, truth}"});
  } else {
    for (std::size_t i = 0; i < body["pairs"].size(); ++i) {
      const auto& p = body["pairs"][i];
      if (!p.is_object() || !p.contains("pred") || !p["pred"].is_string() || !p.contains("truth") ||
          !p["truth"].is_string()) {
        errors.push_back({"pairs[" + std::to_string(i) + "]", "must have string fields pred and truth"});
        continue;
      }
      pairs.emplace_back(p["pred"].get<std::string>(), p["truth"].get<std::string>());
    }
  }
  bool foreground_only = false;
  if (body.is_object() && body.contains("foreground_only")) {
    if (!body["foreground_only"].is_boolean()) {
      errors.push_back({"foreground_only", "must be a boolean"});
    } else {
      foreground_only = body["foreground_only"].get<bool>();
    }
  }
  if (!errors.empty()) throw PayloadError(std::move(errors));
  const auto bins = BinsFile::load(config_.bins_path());
  const auto report = evaluate_tile_pairs(store_, pairs, bins, foreground_only);
  return {200, "application/json", report_text(report)};
}

HttpResponse Api::health() {
  json j{{"status", "ok"},
         {"generator_loaded", generator_ != nullptr},
         {"workers", jobs_->workers()},
         {"pending_jobs", jobs_->pending()},
         {"resolution", resolution_}};
  if (generator_) {
    j["generator_digest"] = generator_->backbone().digest();
    j["t_star"] = generator_->t_star();
  }
  return json_response(200, j);
}

std::unique_ptr<httplib::Server> make_server(Api& api) {
  auto svr = std::make_unique<httplib::Server>();
  auto route = [&api](const httplib::Request& req, httplib::Response& res) {
    HttpRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    for (const auto& [k, v] : req.headers) {
      std::string lower = k;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      r.headers.emplace(lower, v);
    }
    r.body = req.body;
    auto out = api.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  svr->Get(".*", route);
  svr->Post(".*", route);
  return svr;
}

void serve(Api& api) {
  auto svr = make_server(api);
  const auto& c = api.config();
  std::cerr << "sense gateway listening on " << c.host << ":" << c.port << "\n";
  if (!svr->listen(c.host, c.port)) {
    throw Error(ErrorKind::io, "cannot listen on " + c.host + ":" + std::to_string(c.port));
  }
}

}  // namespace sense::gateway
