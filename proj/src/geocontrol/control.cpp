#include "sense/geocontrol/control.hpp"

#include <json.hpp>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/oracle_city.hpp"

namespace sense::geocontrol {

using nlohmann::json;
namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d zero_conv(int in, int out, int kernel) {
  auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).padding(kernel / 2));
  torch::NoGradGuard no_grad;
  conv->weight.zero_();
  conv->bias.zero_();
  return conv;
}

void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard no_grad;
  auto from = src.named_parameters();
  for (auto& p : dst.named_parameters()) p.value().copy_(from[p.key()]);
  auto from_buf = src.named_buffers();
  for (auto& b : dst.named_buffers()) b.value().copy_(from_buf[b.key()]);
}

}  // namespace

HintEncoderImpl::HintEncoderImpl(int in_channels, int out_channels) {
  layers_ = register_module(
      "layers", torch::nn::Sequential(diffcore::conv3x3(in_channels, 16), torch::nn::SiLU(),
                                      diffcore::conv3x3(16, 32, 2), torch::nn::SiLU(), diffcore::conv3x3(32, 32),
                                      torch::nn::SiLU(), diffcore::conv3x3(32, 64, 2), torch::nn::SiLU()));
  zero_out = register_module("zero_out", zero_conv(64, out_channels, 3));
}

torch::Tensor HintEncoderImpl::forward(const torch::Tensor& mask) { return zero_out->forward(layers_->forward(mask)); }

ControlBranchImpl::ControlBranchImpl(const diffcore::UNetConfig& c, int constraint_channels) {
  hint = register_module("hint", HintEncoder(constraint_channels, c.width));
  encoder = register_module("encoder", diffcore::UNetEncoder(c));
  middle = register_module("middle", diffcore::UNetMiddle(c));
  zero_convs = register_module("zero_convs", torch::nn::ModuleList());
  for (int ch : {c.width, c.width, c.deep_width, c.deep_width, c.deep_width}) zero_convs->push_back(zero_conv(ch, ch, 1));
}

ControlResiduals ControlBranchImpl::forward(const torch::Tensor& zt, const torch::Tensor& t,
                                            const torch::Tensor& context, const torch::Tensor& context_pad,
                                            const torch::Tensor& constraints) {
  auto state = encoder->forward(zt, t, context, context_pad, hint->forward(constraints));
  auto m = middle->forward(state.skips.back(), state.temb, context, context_pad);
  ControlResiduals r;
  for (std::size_t i = 0; i < state.skips.size(); ++i) {
    r.skips.push_back(zero_convs[i]->as<torch::nn::Conv2d>()->forward(state.skips[i]));
  }
  r.middle = zero_convs[state.skips.size()]->as<torch::nn::Conv2d>()->forward(m);
  return r;
}

std::vector<torch::Tensor> ControlBranchImpl::zero_parameters() {
  std::vector<torch::Tensor> out{hint->zero_out->weight, hint->zero_out->bias};
  for (auto& m : *zero_convs) {
    auto* conv = m->as<torch::nn::Conv2d>();
    out.push_back(conv->weight);
    out.push_back(conv->bias);
  }
  return out;
}

ControlBranch make_control_branch(Backbone& backbone, std::uint64_t seed) {
  backbone.require_initialized();
  torch::manual_seed(seed);
  ControlBranch branch(backbone.unet->config());
  copy_weights(*branch->encoder, *backbone.unet->encoder);
  copy_weights(*branch->middle, *backbone.unet->middle);
  return branch;
}

torch::Tensor controlled_forward(Backbone& backbone, ControlBranch& branch, const torch::Tensor& zt,
                                 const torch::Tensor& t, const ConditioningBundle& cond,
                                 std::vector<torch::Tensor>* features) {
  backbone.require_initialized();
  if (!branch) throw Error(ErrorKind::uninitialized, "control branch is not initialized");
  const long f = backbone.config.vae.downsample;
  const auto& c = cond.constraints;
  if (!c.defined() || c.dim() != 4 || c.size(0) != zt.size(0) || c.size(2) != zt.size(2) * f ||
      c.size(3) != zt.size(3) * f) {
    throw Error(ErrorKind::shape_mismatch, "controlled_forward: constraint mask resolution does not match the latent (" +
                                               std::to_string(zt.size(2) * f) + "x" + std::to_string(zt.size(3) * f) +
                                               " expected)");
  }
  auto residuals = branch->forward(zt, t, cond.text.tokens, cond.text.padding, c);
  return backbone.denoise(zt, t, cond, &residuals, features);
}

diffcore::EpsModel controlled_eps_model(Backbone& backbone, ControlBranch& branch) {
  return [&backbone, &branch](const torch::Tensor& zt, const torch::Tensor& t, const ConditioningBundle& cond,
                              std::vector<torch::Tensor>* features) {
    return controlled_forward(backbone, branch, zt, t, cond, features);
  };
}

double evaluate_control_loss(Backbone& backbone, ControlBranch& branch, const torch::Tensor& latents,
                             const diffcore::ImageCorpus& corpus, std::uint64_t seed) {
  bool was_training = branch->is_training();
  branch->train(false);
  auto cond_for = [&](long b, long e) {
    auto cond = backbone.condition(std::vector<std::string>(corpus.prompts.begin() + b, corpus.prompts.begin() + e));
    cond.constraints = corpus.constraints.slice(0, b, e);
    return cond;
  };
  double loss = diffcore::fixed_draw_loss(backbone.schedule, controlled_eps_model(backbone, branch), latents,
                                          cond_for, seed);
  branch->train(was_training);
  return loss;
}

ControlTrainLog train_control(Backbone& backbone, ControlBranch& branch, const diffcore::ImageCorpus& corpus,
                              const diffcore::TrainOptions& options) {
  backbone.require_initialized();
  if (corpus.size() == 0) throw Error(ErrorKind::invalid_argument, "train_control: empty corpus");
  ControlTrainLog log;
  log.backbone_digest_before = backbone.digest();
  backbone.train(false);
  backbone.set_trainable(false);
  torch::manual_seed(options.seed);
  auto gen = diffcore::make_generator(options.seed);
  auto latents = diffcore::encode_in_chunks(backbone, corpus.images);
  const long n_eval = std::min<long>(latents.size(0), 128);
  auto eval_corpus = corpus.subset([&] {
    std::vector<std::size_t> rows(static_cast<std::size_t>(n_eval));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
  }());
  const std::uint64_t eval_seed = options.seed ^ 0x5eedULL;
  log.eval_before = evaluate_control_loss(backbone, branch, latents.slice(0, 0, n_eval), eval_corpus, eval_seed);

  torch::optim::AdamW opt(branch->parameters(), torch::optim::AdamWOptions(options.lr).weight_decay(0.0));
  branch->train(true);
  auto model = controlled_eps_model(backbone, branch);
  for (int step = 0; step < options.steps; ++step) {
    auto idx = torch::randint(0, latents.size(0), {std::min<long>(options.batch_size, latents.size(0))}, gen,
                              torch::kInt64);
    std::vector<std::string> prompts;
    auto a = idx.accessor<std::int64_t, 1>();
    for (long i = 0; i < idx.size(0); ++i) prompts.push_back(corpus.prompts[static_cast<std::size_t>(a[i])]);
    ConditioningBundle cond;
    {
      torch::NoGradGuard no_grad;
      cond = backbone.condition(prompts);
    }
    cond.constraints = corpus.constraints.index_select(0, idx);
    auto loss = diffcore::ldm_loss(backbone.schedule, model, latents.index_select(0, idx), cond, gen);
    opt.zero_grad();
    loss.backward();
    opt.step();
    log.losses.push_back(loss.item<double>());
    if (options.on_log && (step % std::max(1, options.log_every) == 0 || step + 1 == options.steps)) {
      options.on_log(step, log.losses.back());
    }
  }
  branch->train(false);
  log.eval_after = evaluate_control_loss(backbone, branch, latents.slice(0, 0, n_eval), eval_corpus, eval_seed);
  backbone.set_trainable(true);
  log.backbone_digest_after = backbone.digest();
  return log;
}

void save_control(const std::filesystem::path& path, ControlBranch& branch, const Backbone& backbone) {
  torch::serialize::OutputArchive archive;
  json meta{{"format", "sense-control"},
            {"version", 1},
            {"backbone_digest", backbone.digest()},
            {"branch_digest", diffcore::module_digest(*branch)}};
  archive.write("meta", c10::IValue(meta.dump()));
  torch::serialize::OutputArchive sub;
  branch->save(sub);
  archive.write("branch", sub);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

ControlBranch load_control(const std::filesystem::path& path, const Backbone& backbone) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::not_found, "no checkpoint at " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue meta_value;
  archive.read("meta", meta_value);
  auto meta = json::parse(meta_value.toStringRef());
  if (meta.value("format", "") != "sense-control") {
    throw Error(ErrorKind::io, path.string() + " is not a control checkpoint");
  }
  if (meta["backbone_digest"].get<std::string>() != backbone.digest()) {
    throw Error(ErrorKind::digest_mismatch, path.string() + " was trained against a different backbone");
  }
  ControlBranch branch(backbone.unet->config());
  torch::serialize::InputArchive sub;
  archive.read("branch", sub);
  branch->load(sub);
  branch->train(false);
  return branch;
}

torch::Tensor generate_images(Backbone& backbone, ControlBranch& branch, const torch::Tensor& constraints,
                              const std::vector<std::string>& prompts, const std::vector<std::uint64_t>& seeds,
                              long chunk) {
  torch::NoGradGuard no_grad;
  const long n = static_cast<long>(seeds.size());
  const long f = backbone.config.vae.downsample;
  std::vector<long> chw{backbone.config.vae.latent_channels, constraints.size(2) / f, constraints.size(3) / f};
  std::vector<torch::Tensor> out;
  auto model = controlled_eps_model(backbone, branch);
  for (long b = 0; b < n; b += chunk) {
    long e = std::min(n, b + chunk);
    auto cond = backbone.condition(std::vector<std::string>(prompts.begin() + b, prompts.begin() + e));
    cond.constraints = constraints.slice(0, b, e);
    auto res = diffcore::sample_latents(backbone.schedule, model, cond,
                                        std::vector<std::uint64_t>(seeds.begin() + b, seeds.begin() + e), chw);
    out.push_back(backbone.decode_latents(res.latents));
  }
  return torch::cat(out);
}

double constraint_fidelity(const torch::Tensor& images, const torch::Tensor& constraints) {
  std::size_t inter = 0, uni = 0;
  for (long i = 0; i < images.size(0); ++i) {
    auto detected = tiles::detect_roads(diffcore::tensor_to_image(images[i]));
    auto truth = constraints[i][static_cast<long>(tiles::ConstraintChannel::major_road)].gt(0.5).contiguous();
    auto acc = truth.accessor<bool, 2>();
    for (std::size_t y = 0; y < detected.height(); ++y) {
      for (std::size_t x = 0; x < detected.width(); ++x) {
        bool a = detected.at(y, x) != 0, b = acc[static_cast<long>(y)][static_cast<long>(x)];
        inter += a && b;
        uni += a || b;
      }
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace sense::geocontrol
