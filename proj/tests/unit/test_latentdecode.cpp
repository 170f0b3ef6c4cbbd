#include "unit/torch_doctest.hpp"

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "model_fixtures.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/latentdecode/decode.hpp"

using namespace sense;
using namespace sense::diffcore;
using namespace sense::latentdecode;
using sense::testing::kPrompt;
using sense::testing::tiny_backbone_config;

namespace {

// Fused channels of the tiny backbone: deep, deep, width, width.
constexpr int kTinyFused = 32 + 32 + 16 + 16;

HeadConfig tiny_head(HeadKind kind) {
  HeadConfig c;
  c.kind = kind;
  c.in_channels = kTinyFused;
  c.width = 16;
  c.heads = 2;
  c.out_size = 32;
  return c;
}

}  // namespace

TEST_CASE("feature fusion: shapes and channel order") {
  std::vector<torch::Tensor> fs{torch::full({1, 64, 16, 16}, 1.0f), torch::full({1, 32, 32, 32}, 2.0f),
                                torch::full({1, 16, 64, 64}, 3.0f)};
  auto fused = fuse_features(fs);
  CHECK(fused.sizes() == torch::IntArrayRef({1, 112, 64, 64}));
  CHECK(fused[0][0][5][5].item<float>() == doctest::Approx(1.0f));
  CHECK(fused[0][64][5][5].item<float>() == doctest::Approx(2.0f));
  CHECK(fused[0][111][5][5].item<float>() == doctest::Approx(3.0f));
  CHECK_THROWS_AS(fuse_features({fs[0]}), Error);
}

TEST_CASE("feature extraction is deterministic and validates t_star") {
  Backbone b(tiny_backbone_config(), 41);
  b.train(false);
  auto branch = geocontrol::make_control_branch(b, 42);
  branch->train(false);
  torch::NoGradGuard ng;
  auto cond = b.condition({kPrompt, kPrompt});
  cond.constraints = torch::zeros({2, 3, 32, 32});
  auto z0 = seeded_randn({2, 4, 8, 8}, 43);
  std::vector<std::uint64_t> seeds{feature_noise_seed("a", 0), feature_noise_seed("b", 0)};
  auto x = extract_features(b, &branch, z0, cond, 10, seeds);
  auto y = extract_features(b, &branch, z0, cond, 10, seeds);
  CHECK(x.features.size() == 4);
  CHECK(x.fused.sizes() == torch::IntArrayRef({2, kTinyFused, 8, 8}));
  CHECK(torch::equal(x.fused, y.fused));
  CHECK(feature_noise_seed("a", 0) != feature_noise_seed("a", 1));
  CHECK_THROWS_AS(extract_features(b, &branch, z0, cond, 0, seeds), Error);
  CHECK_THROWS_AS(extract_features(b, &branch, z0, cond, b.schedule.T + 1, seeds), Error);
  CHECK_THROWS_AS(extract_features(b, &branch, z0, cond, 5, {1}), Error);
}

TEST_CASE("decoder heads emit normalised distributions") {
  torch::manual_seed(3);
  for (auto kind : {HeadKind::height, HeadKind::energy}) {
    DecoderHead head(tiny_head(kind));
    head->train(false);
    FeatureBundle bundle;
    bundle.fused = torch::randn({2, kTinyFused, 8, 8});
    auto p = kind == HeadKind::height ? decode_height(head, bundle) : decode_energy(head, bundle);
    CHECK(p.size(1) == head_classes(kind));
    CHECK(p.size(2) == 32);
    CHECK((p.sum(1) - 1.0).abs().max().item<double>() < 1e-6);
    bundle.fused = torch::randn({1, kTinyFused + 1, 8, 8});
    CHECK_THROWS_AS(decode_probabilities(head, bundle), Error);
  }
  DecoderHead h(tiny_head(HeadKind::height));
  FeatureBundle bundle;
  bundle.fused = torch::randn({1, kTinyFused, 8, 8});
  CHECK_THROWS_AS(decode_energy(h, bundle), Error);
}

TEST_CASE("energy loss: hand cases") {
  auto target = torch::tensor({3}, torch::kInt64).view({1, 1, 1});
  auto uniform = torch::full({1, 4, 1, 1}, 0.25, torch::kFloat64);
  auto terms = energy_loss_terms(uniform, target, {1, 1, 1, 1});
  CHECK(terms.cross_entropy.item<double>() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // Dice with smoothing 1: target class 1 - 1.5/2.25, others 1 - 1/1.25.
  CHECK(terms.dice.item<double>() == doctest::Approx((1.0 / 3.0 + 3 * 0.2) / 4.0).epsilon(1e-12));

  auto labels = torch::tensor({0, 1, 2, 3}, torch::kInt64).view({1, 2, 2});
  auto onehot = torch::nn::functional::one_hot(labels, 4).permute({0, 3, 1, 2}).to(torch::kFloat64);
  auto perfect = energy_loss_terms(onehot, labels, {1, 1, 1, 1});
  CHECK(perfect.cross_entropy.item<double>() == 0.0);
  CHECK(perfect.dice.item<double>() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(energy_loss(uniform, target, {1, 0, 1, 1}), Error);
  CHECK_THROWS_AS(energy_loss(uniform, target, {1, -1, 1, 1}), Error);
  CHECK_THROWS_AS(energy_loss(uniform, target, {1, 1, 1}), Error);
}

TEST_CASE("energy loss: gradient agrees with central differences on a 2x2 map") {
  auto target = torch::tensor({0, 3, 1, 3}, torch::kInt64).view({1, 2, 2});
  std::vector<double> w{0.5, 1.0, 1.5, 2.0};
  auto logits = torch::randn({1, 4, 2, 2}, make_generator(9), torch::kFloat64);
  auto f = [&](const torch::Tensor& l) { return energy_loss(torch::softmax(l, 1), target, w); };
  auto x = logits.clone().requires_grad_(true);
  f(x).backward();
  auto grad = x.grad().view(-1);
  const double h = 1e-6;
  for (long i = 0; i < 16; ++i) {
    auto up = logits.clone(), dn = logits.clone();
    up.view(-1)[i] += h;
    dn.view(-1)[i] -= h;
    double fd = (f(up).item<double>() - f(dn).item<double>()) / (2 * h);
    double an = grad[i].item<double>();
    CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(an), 1e-8));
  }
  // The logits form agrees with the probability form.
  CHECK(segmentation_loss(logits, target, w).item<double>() == doctest::Approx(f(logits).item<double>()).epsilon(1e-12));
}

TEST_CASE("class weights") {
  auto eq = fit_class_weights(std::vector<std::uint64_t>{5, 5, 5, 5});
  for (double v : eq) CHECK(v == doctest::Approx(1.0));
  auto w = fit_class_weights(std::vector<std::uint64_t>{70, 10, 10, 10});
  CHECK(w[0] == doctest::Approx(0.1818).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(1.2727).epsilon(1e-3));
  CHECK((w[0] + w[1] + w[2] + w[3]) / 4.0 == doctest::Approx(1.0));
  CHECK(w[1] > w[0]);
  try {
    fit_class_weights(std::vector<std::uint64_t>{3, 0, 2, 1});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
  tiles::ClassMap m;
  m.labels = Grid<std::uint8_t>(2, 2, 1);
  m.labels[1] = 1;
  m.labels[2] = 2;
  m.labels[3] = 3;
  m.n_classes = 4;
  auto mw = fit_class_weights({m}, 4);
  for (double v : mw) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("head training leaves backbone and control untouched; checkpoints are bound") {
  Backbone b(tiny_backbone_config(), 51);
  auto branch = geocontrol::make_control_branch(b, 52);
  std::vector<tiles::Tile> ts;
  for (int i = 0; i < 4; ++i) {
    tiles::Tile t;
    t.tile_id = "h" + std::to_string(i);
    t.city = "Busan";
    t.image = Grid<float>(32, 32, 3, 0.4f);
    t.constraints = Grid<std::uint8_t>(32, 32, 3, 0);
    t.height = Grid<float>(32, 32, 1, 0.0f);
    t.energy = Grid<float>(32, 32, 1, 0.0f);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        t.height.at(y + 8 * (i % 2), x + 4 * i) = 10.0f * static_cast<float>(1 + (x / 4));
        t.energy.at(y, x) = 1.0f + 0.1f * static_cast<float>(y) + 0.01f * static_cast<float>(x + i);
      }
    t.energy.at(31, 31) = tiles::kEnergyNull;
    ts.push_back(t);
  }
  std::vector<float> ev;
  for (auto& t : ts) ev.insert(ev.end(), t.energy.values().begin(), t.energy.values().end());
  auto bins = tiles::fit_bin_edges(ev, tiles::DiscretizationScheme::energy_tertile);
  auto data = labeled_set_from_tiles(ts, HeadKind::energy, bins);
  CHECK_FALSE(data.valid[0][31][31].item<bool>());
  torch::manual_seed(1);
  DecoderHead head(tiny_head(HeadKind::energy));
  HeadTrainOptions o;
  o.epochs = 6;
  o.batch_size = 2;
  o.t_star = 5;
  o.lr = 3e-3;
  auto log = train_head(b, branch, head, data, o);
  CHECK(log.backbone_digest_before == log.backbone_digest_after);
  CHECK(log.control_digest_before == log.control_digest_after);
  CHECK(log.epoch_losses.back() < log.epoch_losses.front());
  CHECK(log.class_weights.size() == 4);

  auto path = std::filesystem::temp_directory_path() / ("sense_head_" + std::to_string(::getpid()) + ".pt");
  HeadCheckpointMeta meta{head->config(), 5, b.digest(), module_digest(*branch), log.class_weights, bins.edges, {}};
  save_head(path, head, meta);
  HeadCheckpointMeta back_meta;
  auto back = load_head(path, b, branch, &back_meta);
  CHECK(back_meta.t_star == 5);
  CHECK(back_meta.bin_edges == bins.edges);
  CHECK(module_digest(*back) == module_digest(*head));
  auto other = geocontrol::make_control_branch(b, 99);
  {
    torch::NoGradGuard ng;
    other->zero_parameters()[0].fill_(0.5);
  }
  CHECK_THROWS_AS(load_head(path, b, other), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(train_head(b, branch, head, LabeledSet{}, o), Error);
}
