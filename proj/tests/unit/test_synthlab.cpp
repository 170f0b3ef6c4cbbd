#include "unit/torch_doctest.hpp"

#include <algorithm>
#include <set>

#include "model_fixtures.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/synthlab/experiment.hpp"
#include "sense/tilestore/oracle_city.hpp"
#include "sense/tilestore/transform.hpp"

using namespace sense;
using namespace sense::synthlab;
using latentdecode::HeadKind;
using sense::testing::tiny_backbone_config;

namespace {

std::vector<tiles::Tile> oracle_tiles(std::size_t n, std::size_t side, std::uint64_t seed = 77) {
  tiles::OracleCityConfig cfg;
  cfg.resolution = {side, side};
  cfg.null_block_probability = 0.0;
  std::vector<tiles::Tile> out;
  for (auto& o : tiles::generate_oracle_corpus(n, seed, cfg)) out.push_back(o.tile);
  return out;
}

struct TinyStack {
  std::shared_ptr<diffcore::Backbone> backbone;
  latentdecode::ControlBranch branch{nullptr};
  latentdecode::DecoderHead height{nullptr}, energy{nullptr};
  latentdecode::HeadCheckpointMeta height_meta, energy_meta;
};

TinyStack tiny_stack() {
  TinyStack s;
  s.backbone = std::make_shared<diffcore::Backbone>(tiny_backbone_config(), 61);
  s.branch = geocontrol::make_control_branch(*s.backbone, 62);
  torch::manual_seed(63);
  s.height = latentdecode::DecoderHead(latentdecode::head_config_for(*s.backbone, HeadKind::height));
  s.energy = latentdecode::DecoderHead(latentdecode::head_config_for(*s.backbone, HeadKind::energy));
  const auto bb = s.backbone->digest();
  const auto cd = diffcore::module_digest(*s.branch);
  s.height_meta = {s.height->config(), 4, bb, cd, {}, {5, 10, 20}, {0, 3, 7, 15, 30}};
  s.energy_meta = {s.energy->config(), 4, bb, cd, {1, 1, 1, 1}, {8, 9}, {0, 7.5, 8.5, 9.5}};
  return s;
}

AnnotatingGenerator make_generator(TinyStack& s) {
  return AnnotatingGenerator(s.backbone, s.branch, s.height, s.height_meta, s.energy, s.energy_meta);
}

GenerationRequest request_for(const tiles::Tile& t, std::uint64_t seed) {
  return {t.constraints, t.city, t.density, seed, t.tile_id};
}

}  // namespace

TEST_CASE("annotated generation is deterministic and carries provenance") {
  auto s = tiny_stack();
  auto gen = make_generator(s);
  auto tiles = oracle_tiles(2, 32);
  auto a = gen.generate_one(request_for(tiles[0], 5));
  auto b = gen.generate_one(request_for(tiles[0], 5));
  auto c = gen.generate_one(request_for(tiles[0], 6));
  CHECK(a.digest() == b.digest());
  CHECK(a.tile.image.values().size() == b.tile.image.values().size());
  CHECK(std::equal(a.tile.image.values().begin(), a.tile.image.values().end(), b.tile.image.values().begin()));
  CHECK(a.digest() != c.digest());
  CHECK(a.provenance.generator_digest == s.backbone->digest());
  CHECK(a.provenance.source_tile_id == tiles[0].tile_id);
  CHECK(a.provenance.seed == 5);
  CHECK(a.provenance.t_star == 4);
  CHECK(a.tile.image.height() == 32);
  CHECK(a.height_classes.labels.height() == 32);
  for (auto v : a.height_classes.labels.values()) CHECK(v < 5);
  for (auto v : a.energy_classes.labels.values()) CHECK(v < 4);
  // Layers hold class representatives; background stays zero.
  for (std::size_t i = 0; i < a.energy_classes.labels.size(); ++i) {
    const auto l = a.energy_classes.labels[i];
    CHECK(a.tile.energy[i] == doctest::Approx(s.energy_meta.representative[l]));
  }
  for (auto v : a.tile.image.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // Batched generation matches one-at-a-time generation per request.
  auto batch = gen.generate({request_for(tiles[0], 5), request_for(tiles[1], 9)}, 2);
  CHECK(batch.size() == 2);
  CHECK(batch[0].provenance.source_tile_id == tiles[0].tile_id);
}

TEST_CASE("annotated generation validates its inputs") {
  auto s = tiny_stack();
  auto gen = make_generator(s);
  auto t = oracle_tiles(1, 32)[0];
  auto bad = request_for(t, 1);
  bad.density.bcr = 150.0;
  try {
    gen.generate_one(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bcr") != std::string::npos);
  }
  auto wrong = request_for(oracle_tiles(1, 64)[0], 1);
  CHECK_THROWS_AS(gen.generate_one(wrong), Error);

  auto meta = s.energy_meta;
  meta.backbone_digest = "0000";
  try {
    AnnotatingGenerator g(s.backbone, s.branch, s.height, s.height_meta, s.energy, meta);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::digest_mismatch);
  }
  auto other_t = s.energy_meta;
  other_t.t_star = 5;
  CHECK_THROWS_AS(AnnotatingGenerator(s.backbone, s.branch, s.height, s.height_meta, s.energy, other_t), Error);
}

TEST_CASE("class marginals and gaps") {
  tiles::ClassMap m;
  m.labels = Grid<std::uint8_t>(2, 2, 1);
  m.labels[0] = 0;
  m.labels[1] = 1;
  m.labels[2] = 1;
  m.labels[3] = 3;
  m.n_classes = 4;
  auto p = class_marginals({m}, 4);
  CHECK(p == std::vector<double>{0.25, 0.5, 0.0, 0.25});
  auto labels = torch::tensor({0, 1, 1, 3}, torch::kInt64).view({1, 2, 2});
  auto valid = torch::tensor({true, true, false, true}).view({1, 2, 2});
  auto q = class_marginals(labels, valid, 4);
  CHECK(q[0] == doctest::Approx(1.0 / 3));
  CHECK(q[1] == doctest::Approx(1.0 / 3));
  CHECK(max_marginal_gap(p, q) == doctest::Approx(25.0 - 100.0 / 12.0));
  CHECK_THROWS_AS(max_marginal_gap(p, {1.0}), Error);
}

TEST_CASE("real subsets are seeded and leakage is detected") {
  auto a = real_subset(100, 0.1, 3);
  auto b = real_subset(100, 0.1, 3);
  auto c = real_subset(100, 0.1, 4);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 10);
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 10);
  CHECK(real_subset(5, 0.01, 1).size() == 1);
  auto whole = real_subset(100, 1.0, 3);
  CHECK(std::equal(a.begin(), a.end(), whole.begin()));
  CHECK_NOTHROW(check_no_leakage({"a", "b"}, {"c"}));
  try {
    check_no_leakage({"a", "b"}, {"b"});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::leakage);
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
}

TEST_CASE("reference predictor: determinism, errors and capacity") {
  auto tiles = oracle_tiles(4, 64, 91);
  std::vector<float> ev;
  for (auto& t : tiles) ev.insert(ev.end(), t.energy.values().begin(), t.energy.values().end());
  auto bins = tiles::fit_bin_edges(ev, tiles::DiscretizationScheme::energy_tertile);
  auto data = SegmentationData::from_labeled(latentdecode::labeled_set_from_tiles(tiles, HeadKind::energy, bins));
  PredictorConfig pc;
  PredictorTrainOptions po;
  po.steps = 3;
  po.seed = 4;
  auto m1 = train_reference_predictor(data, pc, po);
  auto m2 = train_reference_predictor(data, pc, po);
  CHECK(diffcore::module_digest(*m1) == diffcore::module_digest(*m2));
  CHECK_THROWS_AS(train_reference_predictor(SegmentationData{}, pc, po), Error);

  // Overfit four tiles.
  po.steps = 300;
  po.lr = 3e-3;
  std::vector<double> losses;
  auto m = train_reference_predictor(data, pc, po, &losses);
  auto pred = predict_labels(m, data.images);
  auto seg = segmentation_metrics(pred, data.labels, data.valid, 4);
  MESSAGE("overfit mIoU " << seg.miou);
  CHECK(seg.miou >= 0.95);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("shared segmentation metrics respect the valid mask") {
  auto truth = torch::tensor({0, 1, 2, 3}, torch::kInt64).view({1, 2, 2});
  auto pred = torch::tensor({0, 1, 2, 0}, torch::kInt64).view({1, 2, 2});
  auto valid = torch::tensor({true, true, true, false}).view({1, 2, 2});
  auto m = segmentation_metrics(pred, truth, valid, 4);
  CHECK(m.miou == doctest::Approx(1.0));
  auto all = segmentation_metrics(pred, truth, {}, 4);
  CHECK(all.miou < 1.0);
  CHECK_THROWS_AS(segmentation_metrics(pred, truth.view({1, 4}), {}, 4), Error);
}

TEST_CASE("experiment plans round-trip through JSON and validate") {
  ExperimentPlan p;
  p.real_fractions = {0.1, 0.2};
  p.seeds = {4, 5, 6};
  p.head.t_star = 12;
  auto back = experiment_plan_from_json(to_json(p));
  CHECK(to_json(back) == to_json(p));
  auto j = to_json(p);
  j["real_fractions"] = {0.0};
  CHECK_THROWS_AS(experiment_plan_from_json(j), Error);
  j = to_json(p);
  j["strategies"] = {"mixed", "bogus"};
  CHECK_THROWS_AS(experiment_plan_from_json(j), Error);
  j = to_json(p);
  j["seeds"] = {1, 1};
  CHECK_THROWS_AS(experiment_plan_from_json(j), Error);
}

TEST_CASE("tiny experiment replays exactly and refuses leakage") {
  auto s = tiny_stack();
  auto all = oracle_tiles(10, 32, 5);
  ExperimentInputs in;
  in.backbone = s.backbone.get();
  in.branch = &s.branch;
  in.train_pool.assign(all.begin(), all.begin() + 7);
  in.test.assign(all.begin() + 7, all.end());
  ExperimentPlan plan;
  plan.real_fractions = {0.5};
  plan.seeds = {1, 2};
  plan.head.epochs = 1;
  plan.head.t_star = 4;
  plan.predictor_train.steps = 2;
  plan.predictor_train.batch_size = 4;
  plan.synthetic_count = 3;
  auto r1 = run_experiment(plan, in);
  auto r2 = run_experiment(plan, in);
  CHECK(r1.arms.size() == 6);
  CHECK(r1.sweep_table() == r2.sweep_table());
  for (const auto& a : r1.arms) {
    if (a.strategy == Strategy::mixed) {
      CHECK(a.n_real == 4);
      CHECK(a.n_synthetic == 3);
    }
    CHECK(a.calibration.has_value());
  }
  auto header = r1.sweep_table().substr(0, r1.sweep_table().find('\n'));
  CHECK(header == "real_fraction\tstrategy\tmedian_miou\tmiou_seed_1\tmiou_seed_2");

  in.train_pool.push_back(in.test.front());
  try {
    run_experiment(plan, in);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::leakage);
  }
}
