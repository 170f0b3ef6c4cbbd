#include "sense/diffcore/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "sense/diffcore/digest.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/prompt.hpp"

namespace sense::diffcore {

using nlohmann::json;

json to_json(const BackboneConfig& c) {
  return json{{"image_size", c.image_size},
              {"T", c.T},
              {"beta_start", c.beta_start},
              {"beta_end", c.beta_end},
              {"reference_T", c.reference_T},
              {"max_tokens", c.max_tokens},
              {"cities", c.cities},
              {"vae", {{"latent_channels", c.vae.latent_channels}, {"downsample", c.vae.downsample},
                       {"width", c.vae.width}, {"blocks", c.vae.blocks}}},
              {"text", {{"dim", c.text.dim}, {"heads", c.text.heads}, {"layers", c.text.layers}}},
              {"unet", {{"width", c.unet.width}, {"deep_width", c.unet.deep_width}, {"heads", c.unet.heads},
                        {"time_dim", c.unet.time_dim}}}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.T = j.value("T", c.T);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.reference_T = j.value("reference_T", c.reference_T);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.cities = j.value("cities", c.cities);
  if (j.contains("vae")) {
    const auto& v = j["vae"];
    c.vae.latent_channels = v.value("latent_channels", c.vae.latent_channels);
    c.vae.downsample = v.value("downsample", c.vae.downsample);
    c.vae.width = v.value("width", c.vae.width);
    c.vae.blocks = v.value("blocks", c.vae.blocks);
  }
  if (j.contains("text")) {
    const auto& t = j["text"];
    c.text.dim = t.value("dim", c.text.dim);
    c.text.heads = t.value("heads", c.text.heads);
    c.text.layers = t.value("layers", c.text.layers);
  }
  if (j.contains("unet")) {
    const auto& u = j["unet"];
    c.unet.width = u.value("width", c.unet.width);
    c.unet.deep_width = u.value("deep_width", c.unet.deep_width);
    c.unet.heads = u.value("heads", c.unet.heads);
    c.unet.time_dim = u.value("time_dim", c.unet.time_dim);
  }
  return c;
}

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : config(cfg) {
  schedule = NoiseSchedule::linear(cfg.T, cfg.beta_start, cfg.beta_end, cfg.reference_T);
  vocab = Vocabulary::build_default(cfg.cities);
  config.text.vocab_size = static_cast<int>(vocab.size());
  config.text.max_len = cfg.max_tokens;
  config.unet.latent_channels = cfg.vae.latent_channels;
  config.unet.context_dim = config.text.dim;
  torch::manual_seed(seed);
  vae = Vae(config.vae);
  text = TextEncoder(config.text);
  unet = UNet(config.unet);
}

void Backbone::require_initialized() const {
  if (!initialized()) throw Error(ErrorKind::uninitialized, "backbone weights are not initialized");
}

ConditioningBundle Backbone::condition(const std::vector<std::string>& prompts) {
  require_initialized();
  ConditioningBundle cond;
  cond.text = text->forward(tokenize_batch(vocab, prompts, static_cast<std::size_t>(config.max_tokens)));
  return cond;
}

torch::Tensor Backbone::encode_images(const torch::Tensor& images) {
  require_initialized();
  return vae->encode(images).mean * latent_scale;
}

torch::Tensor Backbone::decode_latents(const torch::Tensor& latents) {
  require_initialized();
  return vae->decode(latents / latent_scale).clamp(0.0, 1.0);
}

torch::Tensor Backbone::denoise(const torch::Tensor& zt, const torch::Tensor& t, const ConditioningBundle& cond,
                                const ControlResiduals* control, std::vector<torch::Tensor>* features) {
  require_initialized();
  return unet->forward(zt, t, cond.text.tokens, cond.text.padding, control, features);
}

EpsModel Backbone::eps_model() {
  return [this](const torch::Tensor& zt, const torch::Tensor& t, const ConditioningBundle& cond,
                std::vector<torch::Tensor>* features) { return denoise(zt, t, cond, nullptr, features); };
}

std::vector<torch::Tensor> Backbone::parameters() {
  require_initialized();
  std::vector<torch::Tensor> out;
  for (auto* m : std::initializer_list<torch::nn::Module*>{vae.get(), text.get(), unet.get()}) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void Backbone::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.set_requires_grad(trainable);
}

void Backbone::train(bool on) {
  require_initialized();
  vae->train(on);
  text->train(on);
  unet->train(on);
}

std::string Backbone::digest() const {
  require_initialized();
  Sha256 d;
  d.module("vae.", *vae);
  d.module("text.", *text);
  d.module("unet.", *unet);
  d.bytes(&latent_scale, sizeof(latent_scale));
  return d.hex();
}

std::string module_digest(const torch::nn::Module& m) {
  Sha256 d;
  d.module("", m);
  return d.hex();
}

void Backbone::save(const std::filesystem::path& path) const {
  require_initialized();
  torch::serialize::OutputArchive archive;
  json meta{{"format", "sense-backbone"},
            {"version", 1},
            {"config", to_json(config)},
            {"vocab", vocab.tokens()},
            {"latent_scale", latent_scale},
            {"betas", schedule.betas},
            {"digest", digest()}};
  archive.write("meta", c10::IValue(meta.dump()));
  for (auto [name, module] : std::initializer_list<std::pair<const char*, const torch::nn::Module*>>{
           {"vae", vae.get()}, {"text", text.get()}, {"unet", unet.get()}}) {
    torch::serialize::OutputArchive sub;
    module->save(sub);
    archive.write(name, sub);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

Backbone Backbone::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::not_found, "no checkpoint at " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue meta_value;
  archive.read("meta", meta_value);
  auto meta = json::parse(meta_value.toStringRef());
  if (meta.value("format", "") != "sense-backbone") {
    throw Error(ErrorKind::io, path.string() + " is not a backbone checkpoint");
  }
  Backbone b(backbone_config_from_json(meta["config"]), 0);
  if (meta["vocab"].get<std::vector<std::string>>() != b.vocab.tokens()) {
    b.vocab = Vocabulary(meta["vocab"].get<std::vector<std::string>>());
  }
  b.latent_scale = meta["latent_scale"].get<double>();
  for (auto [name, module] : std::initializer_list<std::pair<const char*, torch::nn::Module*>>{
           {"vae", b.vae.get()}, {"text", b.text.get()}, {"unet", b.unet.get()}}) {
    torch::serialize::InputArchive sub;
    archive.read(name, sub);
    module->load(sub);
  }
  if (b.digest() != meta["digest"].get<std::string>()) {
    throw Error(ErrorKind::digest_mismatch, path.string() + ": weights do not match the recorded digest");
  }
  b.train(false);
  return b;
}

ImageCorpus ImageCorpus::from_tiles(const std::vector<tiles::Tile>& tiles) {
  if (tiles.empty()) throw Error(ErrorKind::invalid_argument, "empty corpus");
  ImageCorpus c;
  std::vector<torch::Tensor> images, masks;
  for (const auto& t : tiles) {
    images.push_back(image_to_tensor(t.image));
    masks.push_back(mask_to_tensor(t.constraints));
    c.prompts.push_back(tiles::render_prompt(t.city, t.density));
    c.tile_ids.push_back(t.tile_id);
  }
  c.images = torch::stack(images);
  c.constraints = torch::stack(masks);
  return c;
}

ImageCorpus ImageCorpus::subset(const std::vector<std::size_t>& rows) const {
  ImageCorpus c;
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  auto index = torch::tensor(idx, torch::kInt64);
  c.images = images.index_select(0, index);
  c.constraints = constraints.index_select(0, index);
  for (auto r : rows) {
    c.prompts.push_back(prompts.at(r));
    c.tile_ids.push_back(tile_ids.at(r));
  }
  return c;
}

torch::Tensor encode_in_chunks(Backbone& backbone, const torch::Tensor& images, long chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (long b = 0; b < images.size(0); b += chunk) {
    parts.push_back(backbone.encode_images(images.slice(0, b, std::min(images.size(0), b + chunk))));
  }
  return torch::cat(parts);
}

namespace {

torch::Tensor draw_batch(torch::Generator& gen, long n, int batch) {
  return torch::randint(0, n, {std::min<long>(batch, n)}, gen, torch::kInt64);
}

std::vector<std::string> pick(const std::vector<std::string>& v, const torch::Tensor& idx) {
  std::vector<std::string> out;
  auto a = idx.accessor<std::int64_t, 1>();
  for (long i = 0; i < idx.size(0); ++i) out.push_back(v.at(static_cast<std::size_t>(a[i])));
  return out;
}

void report(const TrainOptions& o, int step, double loss) {
  if (o.on_log && (step % std::max(1, o.log_every) == 0 || step + 1 == o.steps)) o.on_log(step, loss);
}

}  // namespace

TrainLog train_vae(Backbone& backbone, const ImageCorpus& corpus, const TrainOptions& options, double kl_weight) {
  backbone.require_initialized();
  if (corpus.size() == 0) throw Error(ErrorKind::invalid_argument, "train_vae: empty corpus");
  torch::manual_seed(options.seed);
  auto gen = make_generator(options.seed);
  torch::optim::Adam opt(backbone.vae->parameters(), torch::optim::AdamOptions(options.lr));
  backbone.vae->train(true);
  TrainLog log;
  for (int step = 0; step < options.steps; ++step) {
    auto idx = draw_batch(gen, static_cast<long>(corpus.size()), options.batch_size);
    auto loss = vae_loss(backbone.vae, corpus.images.index_select(0, idx), kl_weight, gen);
    opt.zero_grad();
    loss.total.backward();
    opt.step();
    log.losses.push_back(loss.reconstruction.item<double>());
    report(options, step, log.losses.back());
  }
  backbone.vae->train(false);
  {
    torch::NoGradGuard no_grad;
    backbone.latent_scale = 1.0;
    auto z = encode_in_chunks(backbone, corpus.images);
    backbone.latent_scale = 1.0 / std::max(1e-6, z.std().item<double>());
  }
  return log;
}

std::vector<double> vae_reconstruction_error(Backbone& backbone, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto z = encode_in_chunks(backbone, images);
  std::vector<torch::Tensor> parts;
  for (long b = 0; b < z.size(0); b += 64) parts.push_back(backbone.decode_latents(z.slice(0, b, std::min(z.size(0), b + 64))));
  auto err = (torch::cat(parts) - images).abs().mean({0, 2, 3});
  std::vector<double> out;
  for (long c = 0; c < err.size(0); ++c) out.push_back(err[c].item<double>());
  return out;
}

double evaluate_ldm_loss(Backbone& backbone, const torch::Tensor& latents, const std::vector<std::string>& prompts,
                         std::uint64_t seed) {
  bool was_training = backbone.unet->is_training();
  backbone.train(false);
  auto cond_for = [&](long b, long e) {
    return backbone.condition(std::vector<std::string>(prompts.begin() + b, prompts.begin() + e));
  };
  double loss = fixed_draw_loss(backbone.schedule, backbone.eps_model(), latents, cond_for, seed);
  backbone.train(was_training);
  return loss;
}

TrainLog train_ldm(Backbone& backbone, const ImageCorpus& corpus, const TrainOptions& options) {
  backbone.require_initialized();
  if (corpus.size() == 0) throw Error(ErrorKind::invalid_argument, "train_ldm: empty corpus");
  torch::manual_seed(options.seed);
  auto gen = make_generator(options.seed);
  backbone.vae->train(false);
  auto latents = encode_in_chunks(backbone, corpus.images);
  const long n_eval = std::min<long>(latents.size(0), 128);
  std::vector<std::string> eval_prompts(corpus.prompts.begin(), corpus.prompts.begin() + n_eval);
  const std::uint64_t eval_seed = options.seed ^ 0x5eedULL;
  TrainLog log;
  log.eval_before = evaluate_ldm_loss(backbone, latents.slice(0, 0, n_eval), eval_prompts, eval_seed);

  std::vector<torch::Tensor> params = backbone.text->parameters();
  auto up = backbone.unet->parameters();
  params.insert(params.end(), up.begin(), up.end());
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(options.lr).weight_decay(0.0));
  backbone.text->train(true);
  backbone.unet->train(true);
  auto model = backbone.eps_model();
  for (int step = 0; step < options.steps; ++step) {
    auto idx = draw_batch(gen, latents.size(0), options.batch_size);
    auto cond = backbone.condition(pick(corpus.prompts, idx));
    auto loss = ldm_loss(backbone.schedule, model, latents.index_select(0, idx), cond, gen);
    opt.zero_grad();
    loss.backward();
    opt.step();
    log.losses.push_back(loss.item<double>());
    report(options, step, log.losses.back());
  }
  backbone.train(false);
  log.eval_after = evaluate_ldm_loss(backbone, latents.slice(0, 0, n_eval), eval_prompts, eval_seed);
  return log;
}

}  // namespace sense::diffcore
