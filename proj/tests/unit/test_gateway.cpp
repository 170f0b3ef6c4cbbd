#include "unit/torch_doctest.hpp"

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <set>
#include <thread>

#include "model_fixtures.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/gateway/api.hpp"
#include "sense/tilestore/oracle_city.hpp"
#include "sense/tilestore/raster_io.hpp"

using namespace sense;
using namespace sense::gateway;
using latentdecode::HeadKind;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("sense_gateway_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Stack {
  std::shared_ptr<diffcore::Backbone> backbone;
  latentdecode::ControlBranch branch{nullptr};
  latentdecode::DecoderHead height{nullptr}, energy{nullptr};
  latentdecode::HeadCheckpointMeta height_meta, energy_meta;
};

Stack tiny_stack() {
  Stack s;
  s.backbone = std::make_shared<diffcore::Backbone>(sense::testing::tiny_backbone_config(), 71);
  s.branch = geocontrol::make_control_branch(*s.backbone, 72);
  torch::manual_seed(73);
  s.height = latentdecode::DecoderHead(latentdecode::head_config_for(*s.backbone, HeadKind::height));
  s.energy = latentdecode::DecoderHead(latentdecode::head_config_for(*s.backbone, HeadKind::energy));
  const auto bb = s.backbone->digest();
  const auto cd = diffcore::module_digest(*s.branch);
  s.height_meta = {s.height->config(), 4, bb, cd, {}, {5, 10, 20}, {0, 3, 7, 15, 30}};
  s.energy_meta = {s.energy->config(), 4, bb, cd, {1, 1, 1, 1}, {8, 9}, {0, 7.5, 8.5, 9.5}};
  return s;
}

std::shared_ptr<synthlab::AnnotatingGenerator> generator_for(Stack& s) {
  return std::make_shared<synthlab::AnnotatingGenerator>(s.backbone, s.branch, s.height, s.height_meta, s.energy,
                                                         s.energy_meta);
}

json job_body(std::uint64_t seed, double bcr = 20.0) {
  return json{{"city", "Boston"},
              {"seed", seed},
              {"density", {{"bcr", bcr}, {"bvd", 2.5}, {"rd", 8.0}}},
              {"constraints",
               {{"bbox", {0.0, 0.0, 1.0, 1.0}},
                {"geometries",
                 {{{"channel", "major_road"}, {"kind", "line"}, {"points", {{0.1, 0.5}, {0.9, 0.5}}}, {"width_px", 2.0}},
                  {{"channel", "water"},
                   {"kind", "polygon"},
                   {"points", {{0.6, 0.6}, {0.9, 0.6}, {0.9, 0.9}, {0.6, 0.9}}}}}}}}};
}

HttpRequest post(const std::string& path, const json& body, std::map<std::string, std::string> headers = {}) {
  return {"POST", path, {}, std::move(headers), body.dump()};
}

HttpRequest get(const std::string& path, std::map<std::string, std::string> query = {}) {
  return {"GET", path, std::move(query), {}, {}};
}

GatewayConfig config_in(const fs::path& root) {
  GatewayConfig c;
  c.data_root = root / "tiles";
  c.checkpoint_dir = root / "ckpt";
  c.output_dir = root / "out";
  return c;
}

std::string wait_done(Api& api, const std::string& id) {
  auto snap = api.jobs().wait(id, std::chrono::minutes(5));
  REQUIRE(snap.has_value());
  REQUIRE(snap->status == JobStatus::done);
  return snap->result->digest();
}

}  // namespace

TEST_CASE("config defaults, JSON round trip and environment overrides") {
  GatewayConfig c;
  CHECK(c.port == 8080);
  CHECK(c.backbone_path() == fs::path("checkpoints/backbone.pt"));
  CHECK(c.head_path("energy") == fs::path("checkpoints/head_energy.pt"));
  c.port = 9001;
  c.workers = 3;
  auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto j = to_json(c);
  j["prot"] = 1;
  CHECK_THROWS_AS(config_from_json(j), Error);
  j = to_json(c);
  j["workers"] = 0;
  CHECK_THROWS_AS(config_from_json(j), Error);

  std::map<std::string, std::string> env{{"SENSE_DATA_ROOT", "/data/x"}, {"SENSE_PORT", "7000"}};
  auto lookup = [&](const char* k) -> const char* {
    auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  GatewayConfig o;
  apply_env_overrides(o, lookup);
  CHECK(o.data_root == fs::path("/data/x"));
  CHECK(o.port == 7000);
  CHECK(o.checkpoint_dir == fs::path("checkpoints"));
  env["SENSE_PORT"] = "http";
  CHECK_THROWS_AS(apply_env_overrides(o, lookup), Error);

  TempDir d;
  std::ofstream(d.path / "gw.json") << R"({"port": 8123, "workers": 2})";
  env.erase("SENSE_PORT");
  auto loaded = load_config(d.path / "gw.json", lookup);
  CHECK(loaded.port == 8123);
  CHECK(loaded.workers == 2);
  CHECK(loaded.data_root == fs::path("/data/x"));
}

TEST_CASE("base64 round trip") {
  for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)}) {
    CHECK(base64_decode(base64_encode(s)) == s);
  }
  CHECK(base64_encode("hello") == "aGVsbG8=");
  CHECK_THROWS_AS(base64_decode("abc"), Error);
}

TEST_CASE("job payloads are validated field by field") {
  auto req = parse_job_payload(job_body(3), 32);
  CHECK(req.constraints.height() == 32);
  CHECK(req.constraints.channels() == 3);
  std::size_t road = 0, water = 0;
  for (std::size_t i = 0; i < req.constraints.size(); i += 3) {
    water += req.constraints[i];
    road += req.constraints[i + 2];
  }
  CHECK(road > 0);
  CHECK(water > 0);

  try {
    parse_job_payload(job_body(3, 150.0), 32);
    FAIL("expected error");
  } catch (const PayloadError& e) {
    REQUIRE(e.fields().size() == 1);
    CHECK(e.fields()[0].field == "density.bcr");
    CHECK(e.fields()[0].message.find("bcr") != std::string::npos);
  }

  auto bad = job_body(3);
  bad.erase("city");
  bad["seed"] = -1;
  bad["constraints"]["geometries"][1]["points"] = {{0.1, 0.1}};
  bad["constraints"]["geometries"].push_back({{"channel", "lava"}, {"kind", "line"}, {"points", json::array()}});
  try {
    parse_job_payload(bad, 32);
    FAIL("expected error");
  } catch (const PayloadError& e) {
    std::set<std::string> fields;
    for (const auto& f : e.fields()) fields.insert(f.field);
    CHECK(fields.count("city"));
    CHECK(fields.count("seed"));
    CHECK(fields.count("constraints.geometries[1]"));
    CHECK(fields.count("constraints.geometries[2].channel"));
  }

  // PNG constraints must match the model resolution.
  const auto png = tiles::encode_png(tiles::mask_to_png_samples(req.constraints));
  auto as_png = job_body(3);
  as_png["constraints"] = {{"png_base64", base64_encode(std::string(png.begin(), png.end()))}};
  auto from_png = parse_job_payload(as_png, 32);
  CHECK(std::equal(from_png.constraints.values().begin(), from_png.constraints.values().end(),
                 req.constraints.values().begin(), req.constraints.values().end()));
  CHECK_THROWS_AS(parse_job_payload(as_png, 64), PayloadError);

  CHECK(payload_fingerprint(job_body(3)) == payload_fingerprint(job_body(3)));
  CHECK(payload_fingerprint(job_body(3)) != payload_fingerprint(job_body(4)));
}

TEST_CASE("out-of-range density is rejected over the API before any work is queued") {
  TempDir d;
  auto s = tiny_stack();
  Api api(config_in(d.path), generator_for(s));
  auto r = api.handle(post("/jobs", job_body(1, 150.0)));
  CHECK(r.status == 422);
  auto j = json::parse(r.body);
  CHECK(j["error"]["fields"][0]["field"] == "density.bcr");
  CHECK(r.body.find("bcr") != std::string::npos);
  CHECK(api.jobs().pending() == 0);
  CHECK(api.handle({"POST", "/jobs", {}, {}, "{not json"}).status == 400);
  CHECK(api.handle(get("/nowhere")).status == 404);
  CHECK(api.handle(get("/jobs/job-999999")).status == 404);
}

TEST_CASE("concurrent jobs produce distinct deterministic tiles") {
  TempDir d;
  auto s = tiny_stack();
  auto gen = generator_for(s);
  auto cfg = config_in(d.path);
  cfg.workers = 4;
  Api api(cfg, gen);
  std::vector<std::string> ids(8);
  std::vector<std::thread> clients;
  for (int i = 0; i < 8; ++i) {
    clients.emplace_back([&, i] {
      auto r = api.handle(post("/jobs", job_body(100 + i)));
      if (r.status == 202) ids[i] = json::parse(r.body)["job_id"].get<std::string>();
    });
  }
  for (auto& t : clients) t.join();
  std::set<std::string> digests;
  for (int i = 0; i < 8; ++i) {
    REQUIRE(!ids[i].empty());
    const auto digest = wait_done(api, ids[i]);
    digests.insert(digest);
    // Same result as a direct, single-threaded call.
    auto direct = gen->generate_one(parse_job_payload(job_body(100 + i), 32));
    CHECK(direct.digest() == digest);
  }
  CHECK(digests.size() == 8);

  auto view = json::parse(api.handle(get("/jobs/" + ids[0])).body);
  CHECK(view["status"] == "done");
  CHECK(view["result"]["provenance"]["seed"] == 100);
  CHECK(view["result"]["provenance"]["generator_digest"] == s.backbone->digest());
  auto img = api.handle(get("/jobs/" + ids[0] + "/layers/image"));
  CHECK(img.content_type == "image/png");
  auto decoded = tiles::decode_png(tiles::Bytes(img.body.begin(), img.body.end()));
  CHECK(decoded.height() == 32);
  auto energy = api.handle(get("/jobs/" + ids[0] + "/layers/energy"));
  auto raster = tiles::decode_float_raster(tiles::Bytes(energy.body.begin(), energy.body.end()));
  CHECK(raster.grid.height() == 32);
  CHECK(api.handle(get("/jobs/" + ids[0] + "/layers/lidar")).status == 404);
}

TEST_CASE("idempotency keys replay or conflict") {
  TempDir d;
  auto s = tiny_stack();
  Api api(config_in(d.path), generator_for(s));
  auto a = api.handle(post("/jobs", job_body(5), {{"idempotency-key", "k1"}}));
  auto b = api.handle(post("/jobs", job_body(5), {{"idempotency-key", "k1"}}));
  CHECK(a.status == 202);
  CHECK(b.status == 200);
  CHECK(json::parse(a.body)["job_id"] == json::parse(b.body)["job_id"]);
  auto c = api.handle(post("/jobs", job_body(6), {{"idempotency-key", "k1"}}));
  CHECK(c.status == 409);
  auto other = api.handle(post("/jobs", job_body(5), {{"idempotency-key", "k2"}}));
  CHECK(json::parse(other.body)["job_id"] != json::parse(a.body)["job_id"]);
  wait_done(api, json::parse(a.body)["job_id"]);
  wait_done(api, json::parse(other.body)["job_id"]);
}

TEST_CASE("a full queue answers busy") {
  std::atomic<bool> release{false};
  JobQueue q(
      [&](const synthlab::GenerationRequest&) -> synthlab::SyntheticTile {
        while (!release) std::this_thread::sleep_for(std::chrono::milliseconds(1));
        return {};
      },
      1, 1);
  q.submit({});
  // One running and one queued fill a depth-1 queue once the worker picks up the first.
  for (int i = 0; i < 1000 && q.pending() != 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  q.submit({});
  try {
    q.submit({});
    FAIL("expected busy");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::busy);
  }
  release = true;
  q.shutdown();
}

TEST_CASE("auth token guards mutating requests") {
  TempDir d;
  auto cfg = config_in(d.path);
  cfg.auth_token = "s3cret";
  Api api(cfg, nullptr);
  CHECK(api.handle(post("/jobs", job_body(1))).status == 401);
  CHECK(api.handle(post("/jobs", job_body(1), {{"x-sense-token", "s3cret"}})).status == 503);
  CHECK(api.handle(get("/health")).status == 200);
}

TEST_CASE("tile browsing and evaluation match the library path bit for bit") {
  TempDir d;
  auto cfg = config_in(d.path);
  cfg.page_size = 4;
  tiles::TileStore store(cfg.data_root);
  ingest_oracle(store, 10, 13, 32);
  auto corpus = load_corpus(store, false);
  auto bins = fit_bins(corpus.train);
  bins.save(cfg.bins_path());
  Api api(cfg, nullptr);

  auto page1 = json::parse(api.handle(get("/tiles", {{"page", "1"}})).body);
  auto page3 = json::parse(api.handle(get("/tiles", {{"page", "3"}})).body);
  CHECK(page1["total"] == 10);
  CHECK(page1["pages"] == 3);
  CHECK(page1["items"].size() == 4);
  CHECK(page3["items"].size() == 2);
  auto train = json::parse(api.handle(get("/tiles", {{"split", "train"}, {"page_size", "100"}})).body);
  CHECK(train["page_size"] == 4);
  CHECK(train["total"] == corpus.train.size());
  CHECK(api.handle(get("/tiles", {{"page", "0"}})).status == 422);

  const auto manifest = store.manifest();
  const auto& e = manifest[0];
  auto img = api.handle(get("/tiles/" + e.tile_id + "/image"));
  auto on_disk = tiles::read_file(store.tile_dir(e.city, e.tile_id) / "image.png");
  CHECK(img.body == std::string(on_disk.begin(), on_disk.end()));
  auto meta = json::parse(api.handle(get("/tiles/" + e.tile_id + "/meta")).body);
  CHECK(meta.is_object());
  CHECK(api.handle(get("/tiles/none/image")).status == 404);

  json body{{"pairs", json::array()}, {"foreground_only", true}};
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i + 1 < manifest.size(); i += 2) {
    body["pairs"].push_back({{"pred", manifest[i].tile_id}, {"truth", manifest[i + 1].tile_id}});
    pairs.emplace_back(manifest[i].tile_id, manifest[i + 1].tile_id);
  }
  auto r = api.handle(post("/evaluate", body));
  REQUIRE(r.status == 200);
  CHECK(r.body == report_text(evaluate_tile_pairs(store, pairs, BinsFile::load(cfg.bins_path()), true)));
  CHECK(api.handle(post("/evaluate", json{{"pairs", json::array()}})).status == 422);
  CHECK(api.handle(post("/evaluate", json{{"pairs", {{{"pred", "x"}, {"truth", "y"}}}}})).status == 404);
}

TEST_CASE("startup loads checkpoints and refuses mismatched ones") {
  TempDir d;
  auto cfg = config_in(d.path);
  auto none = Api::from_config(cfg);
  CHECK(json::parse(none->handle(get("/health")).body)["generator_loaded"] == false);
  CHECK(none->handle(post("/jobs", job_body(1))).status == 503);

  auto s = tiny_stack();
  fs::create_directories(cfg.checkpoint_dir);
  s.backbone->save(cfg.backbone_path());
  CHECK_THROWS_AS(Api::from_config(cfg), Error);
  geocontrol::save_control(cfg.control_path(), s.branch, *s.backbone);
  latentdecode::save_head(cfg.head_path("height"), s.height, s.height_meta);
  latentdecode::save_head(cfg.head_path("energy"), s.energy, s.energy_meta);
  auto api = Api::from_config(cfg);
  auto health = json::parse(api->handle(get("/health")).body);
  CHECK(health["generator_loaded"] == true);
  CHECK(health["generator_digest"] == s.backbone->digest());

  // A backbone that does not match the saved heads is refused.
  diffcore::Backbone other(sense::testing::tiny_backbone_config(), 999);
  other.save(cfg.backbone_path());
  try {
    Api::from_config(cfg);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::digest_mismatch);
  }
}

TEST_CASE("HTTP round trip on an ephemeral port") {
  TempDir d;
  auto s = tiny_stack();
  Api api(config_in(d.path), generator_for(s));
  auto svr = make_server(api);
  const int port = svr->bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { svr->listen_after_bind(); });
  svr->wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(json::parse(h->body)["generator_loaded"] == true);

  auto bad = cli.Post("/jobs", job_body(1, 150.0).dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  CHECK(bad->body.find("bcr") != std::string::npos);

  httplib::Headers hdr{{"Idempotency-Key", "abc"}};
  auto ok = cli.Post("/jobs", hdr, job_body(2).dump(), "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 202);
  const auto id = json::parse(ok->body)["job_id"].get<std::string>();
  wait_done(api, id);
  auto again = cli.Post("/jobs", hdr, job_body(2).dump(), "application/json");
  REQUIRE(again);
  CHECK(json::parse(again->body)["job_id"] == id);
  auto layer = cli.Get(("/jobs/" + id + "/layers/energy_classes").c_str());
  REQUIRE(layer);
  CHECK(layer->status == 200);
  CHECK(layer->get_header_value("Content-Type") == "image/png");

  svr->stop();
  th.join();
}
