#include "unit/torch_doctest.hpp"

#include <filesystem>
#include <unistd.h>

#include "model_fixtures.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/geocontrol/control.hpp"

using namespace sense;
using namespace sense::diffcore;
using namespace sense::geocontrol;
using sense::testing::kPrompt;
using sense::testing::tiny_backbone_config;

namespace {

ConditioningBundle random_cond(Backbone& b, long batch, std::uint64_t seed) {
  auto cond = b.condition(std::vector<std::string>(static_cast<std::size_t>(batch), kPrompt));
  cond.constraints = seeded_randn({batch, 3, 32, 32}, seed).gt(0.8).to(torch::kFloat32);
  return cond;
}

ImageCorpus tiny_corpus() {
  std::vector<tiles::Tile> ts;
  for (int i = 0; i < 6; ++i) {
    tiles::Tile t;
    t.tile_id = "c" + std::to_string(i);
    t.city = "Lyon";
    t.image = Grid<float>(32, 32, 3, 0.3f);
    t.constraints = Grid<std::uint8_t>(32, 32, 3, 0);
    for (std::size_t x = 0; x < 32; ++x) {
      t.constraints.at(static_cast<std::size_t>(4 * i + 2), x, 2) = 1;
      for (std::size_t c = 0; c < 3; ++c) t.image.at(static_cast<std::size_t>(4 * i + 2), x, c) = 0.6f;
    }
    t.density = {5.0, 1.0, 3.0};
    ts.push_back(t);
  }
  return ImageCorpus::from_tiles(ts);
}

}  // namespace

TEST_CASE("fresh control branch leaves the backbone output bitwise unchanged") {
  Backbone b(tiny_backbone_config(), 21);
  b.train(false);
  auto branch = make_control_branch(b, 22);
  branch->train(false);
  torch::NoGradGuard ng;
  for (int i = 0; i < 5; ++i) {
    auto z = seeded_randn({2, 4, 8, 8}, 100 + i);
    auto t = torch::randint(1, b.schedule.T + 1, {2}, make_generator(200 + i), torch::kInt64);
    auto cond = random_cond(b, 2, 300 + i);
    std::vector<torch::Tensor> f_plain, f_ctl;
    auto plain = b.denoise(z, t, cond, nullptr, &f_plain);
    auto ctl = controlled_forward(b, branch, z, t, cond, &f_ctl);
    CHECK(torch::equal(plain, ctl));
    for (std::size_t k = 0; k < f_plain.size(); ++k) CHECK(torch::equal(f_plain[k], f_ctl[k]));
  }
}

TEST_CASE("zero convolutions receive gradient at initialization") {
  Backbone b(tiny_backbone_config(), 23);
  auto branch = make_control_branch(b, 24);
  b.set_trainable(false);
  auto z0 = seeded_randn({4, 4, 8, 8}, 5);
  auto cond = random_cond(b, 4, 6);
  auto gen = make_generator(7);
  auto loss = ldm_loss(b.schedule, controlled_eps_model(b, branch), z0, cond, gen);
  loss.backward();
  double norm = 0.0;
  for (auto& p : branch->zero_parameters()) {
    REQUIRE(p.grad().defined());
    norm += p.grad().abs().sum().item<double>();
  }
  CHECK(norm > 0.0);
  for (auto& p : b.parameters()) CHECK_FALSE(p.grad().defined());
}

TEST_CASE("control training updates only the branch") {
  Backbone b(tiny_backbone_config(), 25);
  auto branch = make_control_branch(b, 26);
  auto corpus = tiny_corpus();
  std::string branch_before = module_digest(*branch);
  TrainOptions o;
  o.steps = 3;
  o.batch_size = 3;
  o.lr = 1e-3;
  auto log = train_control(b, branch, corpus, o);
  CHECK(log.backbone_digest_before == log.backbone_digest_after);
  CHECK(module_digest(*branch) != branch_before);
  double znorm = 0.0;
  for (auto& p : branch->zero_parameters()) znorm += p.abs().sum().item<double>();
  CHECK(znorm > 0.0);
  // With nonzero gates even an empty constraint mask changes the output.
  torch::NoGradGuard ng;
  auto z = seeded_randn({1, 4, 8, 8}, 9);
  auto t = torch::full({1}, 5, torch::kInt64);
  auto cond = b.condition({kPrompt});
  cond.constraints = torch::zeros({1, 3, 32, 32});
  CHECK_FALSE(torch::equal(b.denoise(z, t, cond), controlled_forward(b, branch, z, t, cond)));
  CHECK_THROWS_AS(train_control(b, branch, ImageCorpus{}, o), Error);
}

TEST_CASE("controlled forward rejects mismatched constraint resolution") {
  Backbone b(tiny_backbone_config(), 27);
  auto branch = make_control_branch(b, 28);
  torch::NoGradGuard ng;
  auto cond = b.condition({kPrompt});
  cond.constraints = torch::zeros({1, 3, 64, 64});
  try {
    controlled_forward(b, branch, torch::zeros({1, 4, 8, 8}), torch::ones({1}, torch::kInt64), cond);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape_mismatch);
  }
}

TEST_CASE("control checkpoints are bound to their backbone") {
  Backbone b(tiny_backbone_config(), 29);
  auto branch = make_control_branch(b, 30);
  auto path = std::filesystem::temp_directory_path() / ("sense_ctl_" + std::to_string(::getpid()) + ".pt");
  save_control(path, branch, b);
  auto back = load_control(path, b);
  CHECK(module_digest(*back) == module_digest(*branch));
  Backbone other(tiny_backbone_config(), 31);
  try {
    load_control(path, other);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::digest_mismatch);
  }
  std::filesystem::remove(path);
}

TEST_CASE("constraint fidelity of the real oracle imagery is one") {
  auto corpus = tiny_corpus();
  // Flat grey strips are classified as road by the oracle palette.
  CHECK(constraint_fidelity(corpus.images, corpus.constraints) > 0.99);
}
