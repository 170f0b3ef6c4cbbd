#include "sense/latentdecode/decode.hpp"

#include <json.hpp>
#include <numeric>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"

namespace sense::latentdecode {

using nlohmann::json;
namespace F = torch::nn::functional;

torch::Tensor fuse_features(const std::vector<torch::Tensor>& features) {
  if (features.size() < 2) throw Error(ErrorKind::invalid_argument, "fuse_features: need at least two feature maps");
  long h = 0, w = 0;
  for (const auto& f : features) {
    if (f.dim() != 4) throw Error(ErrorKind::shape_mismatch, "fuse_features: feature maps must be [B, C, H, W]");
    h = std::max(h, f.size(2));
    w = std::max(w, f.size(3));
  }
  std::vector<torch::Tensor> up;
  for (const auto& f : features) {
    if (f.size(2) == h && f.size(3) == w) {
      up.push_back(f);
    } else {
      up.push_back(F::interpolate(
          f, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false)));
    }
  }
  return torch::cat(up, 1);
}

std::uint64_t feature_noise_seed(const std::string& tile_id, int epoch) {
  return diffcore::stable_seed(tile_id, static_cast<std::uint64_t>(epoch) * 0x100000001b3ULL + 17);
}

FeatureBundle bundle_from_features(std::vector<torch::Tensor> features, int t_star) {
  FeatureBundle b;
  b.fused = fuse_features(features);
  b.features = std::move(features);
  b.t_star = t_star;
  return b;
}

FeatureBundle extract_features(Backbone& backbone, ControlBranch* branch, const torch::Tensor& z0,
                               const diffcore::ConditioningBundle& cond, int t_star,
                               const std::vector<std::uint64_t>& noise_seeds) {
  backbone.require_initialized();
  if (t_star < 1 || t_star > backbone.schedule.T) {
    throw Error(ErrorKind::invalid_argument,
                "extract_features: t_star " + std::to_string(t_star) + " outside [1, " +
                    std::to_string(backbone.schedule.T) + "]");
  }
  if (static_cast<long>(noise_seeds.size()) != z0.size(0)) {
    throw Error(ErrorKind::shape_mismatch, "extract_features: one noise seed per latent required");
  }
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> eps;
  for (std::size_t i = 0; i < noise_seeds.size(); ++i) {
    eps.push_back(diffcore::seeded_randn(z0[static_cast<long>(i)].sizes(), noise_seeds[i]));
  }
  auto t = torch::full({z0.size(0)}, t_star, torch::kInt64);
  auto zt = diffcore::add_noise(backbone.schedule, z0, t, torch::stack(eps));
  std::vector<torch::Tensor> features;
  if (branch) {
    geocontrol::controlled_forward(backbone, *branch, zt, t, cond, &features);
  } else {
    backbone.denoise(zt, t, cond, nullptr, &features);
  }
  return bundle_from_features(std::move(features), t_star);
}

const char* to_string(HeadKind kind) { return kind == HeadKind::height ? "height" : "energy"; }

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "height") return HeadKind::height;
  if (s == "energy") return HeadKind::energy;
  throw Error(ErrorKind::invalid_argument, "unknown head kind '" + s + "' (height|energy)");
}

int head_classes(HeadKind kind) { return kind == HeadKind::height ? 5 : 4; }

HeadConfig head_config_for(const Backbone& backbone, HeadKind kind) {
  HeadConfig c;
  c.kind = kind;
  c.in_channels = 0;
  for (int ch : backbone.unet->decoder->feature_channels()) c.in_channels += ch;
  c.out_size = backbone.config.image_size;
  return c;
}

DecoderHeadImpl::DecoderHeadImpl(const HeadConfig& c) : config_(c) {
  proj_ = register_module("proj", diffcore::conv1x1(c.in_channels, c.width));
  norm1_ = register_module("norm1", diffcore::group_norm(c.width));
  local_ = register_module("local", diffcore::conv3x3(c.width, c.width));
  dilated_ = register_module("dilated", diffcore::conv3x3(c.width, c.width, 1, 2));
  norm2_ = register_module("norm2", diffcore::group_norm(c.width));
  ln_ = register_module("ln", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.width})));
  attn_ = register_module("attn", diffcore::Attention(c.width, c.width, c.heads));
  classify_ = register_module("classify", diffcore::conv1x1(c.width, head_classes(c.kind)));
}

torch::Tensor DecoderHeadImpl::forward(const torch::Tensor& fused) {
  if (fused.dim() != 4 || fused.size(1) != config_.in_channels) {
    throw Error(ErrorKind::shape_mismatch, "decoder head: expected " + std::to_string(config_.in_channels) +
                                               " fused channels, got " +
                                               (fused.dim() == 4 ? std::to_string(fused.size(1)) : "non-4D input"));
  }
  auto h = F::silu(norm1_->forward(proj_->forward(fused)));
  h = h + F::silu(norm2_->forward(local_->forward(h) + dilated_->forward(h)));
  const auto B = h.size(0), C = h.size(1), H = h.size(2), W = h.size(3);
  auto tokens = h.flatten(2).transpose(1, 2);
  auto n = ln_->forward(tokens);
  tokens = tokens + attn_->forward(n, n);
  h = tokens.transpose(1, 2).reshape({B, C, H, W});
  auto logits = classify_->forward(h);
  if (H != config_.out_size || W != config_.out_size) {
    logits = F::interpolate(logits, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{config_.out_size, config_.out_size})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
  }
  return logits;
}

torch::Tensor decode_probabilities(DecoderHead& head, const FeatureBundle& bundle) {
  return torch::softmax(head->forward(bundle.fused), 1);
}

torch::Tensor decode_height(DecoderHead& head, const FeatureBundle& bundle) {
  if (head->config().kind != HeadKind::height) throw Error(ErrorKind::invalid_argument, "decode_height: not a height head");
  return decode_probabilities(head, bundle);
}

torch::Tensor decode_energy(DecoderHead& head, const FeatureBundle& bundle) {
  if (head->config().kind != HeadKind::energy) throw Error(ErrorKind::invalid_argument, "decode_energy: not an energy head");
  return decode_probabilities(head, bundle);
}

torch::Tensor predict_labels(DecoderHead& head, const FeatureBundle& bundle) {
  torch::NoGradGuard no_grad;
  return head->forward(bundle.fused).argmax(1);
}

namespace {

LossTerms weighted_ce_dice(const torch::Tensor& log_probs, const torch::Tensor& target,
                           const std::vector<double>& weights, const torch::Tensor& valid, double dice_eps) {
  const long n = log_probs.size(1);
  if (target.dim() != 3 || target.size(0) != log_probs.size(0) || target.size(1) != log_probs.size(2) ||
      target.size(2) != log_probs.size(3)) {
    throw Error(ErrorKind::shape_mismatch, "segmentation loss: target shape does not match prediction");
  }
  std::vector<double> w = weights.empty() ? std::vector<double>(static_cast<std::size_t>(n), 1.0) : weights;
  if (static_cast<long>(w.size()) != n) {
    throw Error(ErrorKind::invalid_argument, "segmentation loss: expected " + std::to_string(n) + " class weights");
  }
  for (double v : w) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::invalid_argument, "segmentation loss: class weights must be positive and finite");
    }
  }
  auto onehot = F::one_hot(target, n).permute({0, 3, 1, 2}).to(log_probs.scalar_type());
  auto mask = valid.defined() ? valid.to(log_probs.scalar_type()).unsqueeze(1)
                              : torch::ones_like(target, log_probs.options()).unsqueeze(1);
  auto wt = torch::tensor(w, log_probs.options()).view({1, n, 1, 1});
  auto count = mask.sum().clamp_min(1.0);
  // Only the target class term is taken, so zero probabilities elsewhere stay finite.
  auto picked = log_probs.gather(1, target.unsqueeze(1)) * wt.view({n}).index({target}).unsqueeze(1);
  auto ce = -torch::where(mask > 0, picked, torch::zeros_like(picked)).sum() / count;
  auto probs = log_probs.exp() * mask;
  auto y = onehot * mask;
  auto inter = (probs * y).sum({0, 2, 3});
  auto denom = probs.sum({0, 2, 3}) + y.sum({0, 2, 3});
  auto dice = (1.0 - (2.0 * inter + dice_eps) / (denom + dice_eps)).mean();
  return {ce, dice, ce + dice};
}

}  // namespace

LossTerms energy_loss_terms(const torch::Tensor& probs, const torch::Tensor& target,
                            const std::vector<double>& weights, const torch::Tensor& valid, double dice_eps) {
  return weighted_ce_dice(torch::log(probs), target, weights, valid, dice_eps);
}

torch::Tensor energy_loss(const torch::Tensor& probs, const torch::Tensor& target, const std::vector<double>& weights,
                          const torch::Tensor& valid, double dice_eps) {
  return energy_loss_terms(probs, target, weights, valid, dice_eps).total;
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                const std::vector<double>& weights, const torch::Tensor& valid, double dice_eps) {
  return weighted_ce_dice(torch::log_softmax(logits, 1), target, weights, valid, dice_eps).total;
}

std::vector<double> fit_class_weights(const std::vector<std::uint64_t>& counts) {
  if (counts.empty()) throw Error(ErrorKind::invalid_argument, "fit_class_weights: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw Error(ErrorKind::degenerate, "fit_class_weights: class " + std::to_string(c) + " has no pixels");
    }
    total += static_cast<double>(counts[c]);
  }
  const double n = static_cast<double>(counts.size());
  std::vector<double> w;
  double sum = 0.0;
  for (auto c : counts) {
    w.push_back(total / (n * static_cast<double>(c)));
    sum += w.back();
  }
  for (auto& v : w) v *= n / sum;
  return w;
}

std::vector<double> fit_class_weights(const std::vector<tiles::ClassMap>& maps, int n_classes) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto& m : maps) {
    for (auto v : m.labels.values()) {
      if (v >= n_classes) throw Error(ErrorKind::invalid_argument, "fit_class_weights: label out of range");
      ++counts[v];
    }
  }
  return fit_class_weights(counts);
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t>& rows) const {
  LabeledSet s;
  s.corpus = corpus.subset(rows);
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  auto index = torch::tensor(idx, torch::kInt64);
  s.labels = labels.index_select(0, index);
  s.valid = valid.index_select(0, index);
  return s;
}

LabeledSet labeled_set_from_tiles(const std::vector<tiles::Tile>& tiles, HeadKind kind, const tiles::BinEdges& bins) {
  if (tiles.empty()) throw Error(ErrorKind::invalid_argument, "labeled set: no tiles");
  LabeledSet s;
  s.corpus = diffcore::ImageCorpus::from_tiles(tiles);
  std::vector<torch::Tensor> labels, valid;
  for (const auto& t : tiles) {
    const Grid<float>& layer = kind == HeadKind::height ? t.height : t.energy;
    auto m = tiles::apply_bins(layer, bins);
    labels.push_back(diffcore::labels_to_tensor(m.labels));
    Grid<std::uint8_t> ok(layer.height(), layer.width(), 1, 1);
    if (kind == HeadKind::energy) {
      for (std::size_t i = 0; i < ok.size(); ++i) ok[i] = tiles::is_energy_null(layer[i]) ? 0 : 1;
    }
    valid.push_back(diffcore::labels_to_tensor(ok).to(torch::kBool));
  }
  s.labels = torch::stack(labels);
  s.valid = torch::stack(valid);
  return s;
}

HeadTrainLog train_head(Backbone& backbone, ControlBranch& branch, DecoderHead& head, const LabeledSet& data,
                        const HeadTrainOptions& options) {
  if (data.size() == 0) throw Error(ErrorKind::invalid_argument, "train_head: empty corpus");
  HeadTrainLog log;
  log.backbone_digest_before = backbone.digest();
  log.control_digest_before = diffcore::module_digest(*branch);
  const int n_classes = head->n_classes();
  if (options.class_weighted) {
    if (!options.class_weights.empty()) {
      log.class_weights = options.class_weights;
    } else {
      auto flat = data.labels.masked_select(data.valid);
      auto counts = torch::bincount(flat, {}, n_classes);
      std::vector<std::uint64_t> c;
      for (long i = 0; i < n_classes; ++i) c.push_back(static_cast<std::uint64_t>(counts[i].item<std::int64_t>()));
      log.class_weights = fit_class_weights(c);
    }
  }
  backbone.train(false);
  branch->train(false);
  torch::manual_seed(options.seed);
  auto gen = diffcore::make_generator(options.seed);
  auto latents = diffcore::encode_in_chunks(backbone, data.corpus.images);
  torch::optim::AdamW opt(head->parameters(), torch::optim::AdamWOptions(options.lr).weight_decay(1e-4));
  head->train(true);
  const long n = static_cast<long>(data.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    auto order = torch::randperm(n, gen, torch::kInt64);
    double epoch_loss = 0.0;
    long batches = 0;
    for (long b = 0; b < n; b += options.batch_size) {
      auto idx = order.slice(0, b, std::min(n, b + options.batch_size));
      auto acc = idx.accessor<std::int64_t, 1>();
      std::vector<std::string> prompts;
      std::vector<std::uint64_t> seeds;
      for (long i = 0; i < idx.size(0); ++i) {
        auto row = static_cast<std::size_t>(acc[i]);
        prompts.push_back(data.corpus.prompts[row]);
        seeds.push_back(feature_noise_seed(data.corpus.tile_ids[row], epoch));
      }
      FeatureBundle bundle;
      {
        torch::NoGradGuard no_grad;
        auto cond = backbone.condition(prompts);
        cond.constraints = data.corpus.constraints.index_select(0, idx);
        bundle = extract_features(backbone, &branch, latents.index_select(0, idx), cond, options.t_star, seeds);
      }
      auto loss = segmentation_loss(head->forward(bundle.fused), data.labels.index_select(0, idx), log.class_weights,
                                    data.valid.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      log.step_losses.push_back(loss.item<double>());
      epoch_loss += log.step_losses.back();
      ++batches;
    }
    log.epoch_losses.push_back(epoch_loss / static_cast<double>(std::max<long>(1, batches)));
    if (options.on_epoch) options.on_epoch(epoch, log.epoch_losses.back());
  }
  head->train(false);
  log.backbone_digest_after = backbone.digest();
  log.control_digest_after = diffcore::module_digest(*branch);
  return log;
}

torch::Tensor predict_real(Backbone& backbone, ControlBranch& branch, DecoderHead& head,
                           const diffcore::ImageCorpus& corpus, int t_star, long chunk) {
  torch::NoGradGuard no_grad;
  head->train(false);
  std::vector<torch::Tensor> out;
  const long n = static_cast<long>(corpus.size());
  for (long b = 0; b < n; b += chunk) {
    long e = std::min(n, b + chunk);
    std::vector<std::string> prompts(corpus.prompts.begin() + b, corpus.prompts.begin() + e);
    std::vector<std::uint64_t> seeds;
    for (long i = b; i < e; ++i) seeds.push_back(feature_noise_seed(corpus.tile_ids[static_cast<std::size_t>(i)], 0));
    auto cond = backbone.condition(prompts);
    cond.constraints = corpus.constraints.slice(0, b, e);
    auto z0 = backbone.encode_images(corpus.images.slice(0, b, e));
    out.push_back(predict_labels(head, extract_features(backbone, &branch, z0, cond, t_star, seeds)));
  }
  return torch::cat(out);
}

void save_head(const std::filesystem::path& path, DecoderHead& head, const HeadCheckpointMeta& meta) {
  torch::serialize::OutputArchive archive;
  const auto& c = meta.config;
  json j{{"format", "sense-head"},
         {"version", 1},
         {"kind", to_string(c.kind)},
         {"in_channels", c.in_channels},
         {"width", c.width},
         {"heads", c.heads},
         {"out_size", c.out_size},
         {"t_star", meta.t_star},
         {"blocks", {"d0", "d1", "d2", "d3"}},
         {"backbone_digest", meta.backbone_digest},
         {"control_digest", meta.control_digest},
         {"class_weights", meta.class_weights},
         {"bin_edges", meta.bin_edges},
         {"representative", meta.representative}};
  archive.write("meta", c10::IValue(j.dump()));
  torch::serialize::OutputArchive sub;
  head->save(sub);
  archive.write("head", sub);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

DecoderHead load_head(const std::filesystem::path& path, const Backbone& backbone, ControlBranch& branch,
                      HeadCheckpointMeta* meta_out) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::not_found, "no checkpoint at " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue meta_value;
  archive.read("meta", meta_value);
  auto j = json::parse(meta_value.toStringRef());
  if (j.value("format", "") != "sense-head") throw Error(ErrorKind::io, path.string() + " is not a head checkpoint");
  HeadCheckpointMeta meta;
  meta.config.kind = head_kind_from_string(j["kind"].get<std::string>());
  meta.config.in_channels = j["in_channels"].get<int>();
  meta.config.width = j["width"].get<int>();
  meta.config.heads = j["heads"].get<int>();
  meta.config.out_size = j["out_size"].get<int>();
  meta.t_star = j["t_star"].get<int>();
  meta.backbone_digest = j["backbone_digest"].get<std::string>();
  meta.control_digest = j["control_digest"].get<std::string>();
  meta.class_weights = j["class_weights"].get<std::vector<double>>();
  meta.bin_edges = j["bin_edges"].get<std::vector<double>>();
  meta.representative = j["representative"].get<std::vector<double>>();
  if (meta.backbone_digest != backbone.digest() || meta.control_digest != diffcore::module_digest(*branch)) {
    throw Error(ErrorKind::digest_mismatch, path.string() + " was trained against different backbone or control weights");
  }
  DecoderHead head(meta.config);
  torch::serialize::InputArchive sub;
  archive.read("head", sub);
  head->load(sub);
  head->train(false);
  if (meta_out) *meta_out = meta;
  return head;
}

}  // namespace sense::latentdecode
