#include "sense/synthlab/generate.hpp"

#include <cmath>

#include "sense/diffcore/digest.hpp"
#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/prompt.hpp"

namespace sense::synthlab {

using diffcore::module_digest;
using latentdecode::HeadKind;

std::string SyntheticTile::digest() const {
  diffcore::Sha256 h;
  auto img = tile.image.values();
  h.bytes(img.data(), img.size_bytes());
  auto hl = height_classes.labels.values();
  h.bytes(hl.data(), hl.size_bytes());
  auto el = energy_classes.labels.values();
  h.bytes(el.data(), el.size_bytes());
  h.text(provenance.generator_digest);
  h.text(provenance.control_digest);
  h.text(provenance.height_head_digest);
  h.text(provenance.energy_head_digest);
  h.bytes(&provenance.seed, sizeof(provenance.seed));
  h.text(provenance.source_tile_id);
  h.bytes(&provenance.t_star, sizeof(provenance.t_star));
  return h.hex();
}

AnnotatingGenerator::AnnotatingGenerator(std::shared_ptr<diffcore::Backbone> backbone,
                                         latentdecode::ControlBranch branch, DecoderHead height_head,
                                         HeadCheckpointMeta height_meta, DecoderHead energy_head,
                                         HeadCheckpointMeta energy_meta)
    : backbone_(std::move(backbone)),
      branch_(std::move(branch)),
      height_head_(std::move(height_head)),
      energy_head_(std::move(energy_head)),
      height_meta_(std::move(height_meta)),
      energy_meta_(std::move(energy_meta)) {
  if (!backbone_) throw Error(ErrorKind::uninitialized, "generator: no backbone");
  if (height_head_->config().kind != HeadKind::height || energy_head_->config().kind != HeadKind::energy) {
    throw Error(ErrorKind::invalid_argument, "generator: expected a height head and an energy head");
  }
  backbone_digest_ = backbone_->digest();
  const std::string& bb = backbone_digest_;
  control_digest_ = module_digest(*branch_);
  for (const auto* m : {&height_meta_, &energy_meta_}) {
    if (m->backbone_digest != bb || m->control_digest != control_digest_) {
      throw Error(ErrorKind::digest_mismatch, std::string("generator: ") + to_string(m->config.kind) +
                                                  " head was trained against different backbone or control weights");
    }
  }
  if (height_meta_.t_star != energy_meta_.t_star) {
    throw Error(ErrorKind::invalid_argument, "generator: heads use different t_star (" +
                                                 std::to_string(height_meta_.t_star) + " vs " +
                                                 std::to_string(energy_meta_.t_star) + ")");
  }
  if (height_meta_.t_star < 1 || height_meta_.t_star > backbone_->schedule.T) {
    throw Error(ErrorKind::invalid_argument, "generator: t_star outside [1, T]");
  }
  if (height_meta_.representative.size() != 5 || energy_meta_.representative.size() != 4) {
    throw Error(ErrorKind::invalid_argument, "generator: head checkpoints lack per-class representative values");
  }
  height_digest_ = module_digest(*height_head_);
  energy_digest_ = module_digest(*energy_head_);
  backbone_->train(false);
  branch_->train(false);
  height_head_->train(false);
  energy_head_->train(false);
}

std::shared_ptr<AnnotatingGenerator> AnnotatingGenerator::load(const std::filesystem::path& backbone,
                                                               const std::filesystem::path& control,
                                                               const std::filesystem::path& height_head,
                                                               const std::filesystem::path& energy_head) {
  auto b = std::make_shared<diffcore::Backbone>(diffcore::Backbone::load(backbone));
  auto branch = geocontrol::load_control(control, *b);
  HeadCheckpointMeta hm, em;
  auto h = latentdecode::load_head(height_head, *b, branch, &hm);
  auto e = latentdecode::load_head(energy_head, *b, branch, &em);
  return std::make_shared<AnnotatingGenerator>(std::move(b), std::move(branch), std::move(h), std::move(hm),
                                               std::move(e), std::move(em));
}

namespace {

Grid<float> representative_layer(const Grid<std::uint8_t>& labels, const std::vector<double>& rep) {
  Grid<float> out(labels.height(), labels.width(), 1, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == 0 ? 0.0f : static_cast<float>(rep[labels[i]]);
  return out;
}

}  // namespace

AnnotatedBatch sample_annotated(diffcore::Backbone& backbone, latentdecode::ControlBranch& branch,
                                std::vector<DecoderHead*> heads, int t_star,
                                const std::vector<GenerationRequest>& requests, long chunk) {
  if (chunk < 1) throw Error(ErrorKind::invalid_argument, "generator: chunk must be positive");
  if (requests.empty()) throw Error(ErrorKind::invalid_argument, "generator: no requests");
  const auto size = static_cast<std::size_t>(backbone.config.image_size);
  for (const auto& r : requests) {
    if (r.constraints.height() != size || r.constraints.width() != size ||
        r.constraints.channels() != tiles::kConstraintChannels) {
      throw Error(ErrorKind::shape_mismatch, "generator: constraint mask must be " + std::to_string(size) + "x" +
                                                 std::to_string(size) + "x3");
    }
    r.density.validate();
  }
  torch::NoGradGuard no_grad;
  backbone.train(false);
  branch->train(false);
  for (auto* h : heads) (*h)->train(false);
  const long f = backbone.config.vae.downsample;
  const long side = static_cast<long>(size) / f;
  std::vector<long> chw{backbone.config.vae.latent_channels, side, side};
  auto model = geocontrol::controlled_eps_model(backbone, branch);

  std::vector<torch::Tensor> images;
  std::vector<std::vector<torch::Tensor>> labels(heads.size());
  const long n = static_cast<long>(requests.size());
  for (long b = 0; b < n; b += chunk) {
    const long e = std::min(n, b + chunk);
    std::vector<std::string> prompts;
    std::vector<torch::Tensor> masks;
    std::vector<std::uint64_t> seeds;
    for (long i = b; i < e; ++i) {
      const auto& r = requests[static_cast<std::size_t>(i)];
      prompts.push_back(tiles::render_prompt(r.city, r.density));
      masks.push_back(diffcore::mask_to_tensor(r.constraints));
      seeds.push_back(r.seed);
    }
    auto cond = backbone.condition(prompts);
    cond.constraints = torch::stack(masks);
    auto res = diffcore::sample_latents(backbone.schedule, model, cond, seeds, chw, t_star);
    images.push_back(backbone.decode_latents(res.latents));
    auto bundle = latentdecode::bundle_from_features(std::move(res.features), t_star);
    for (std::size_t k = 0; k < heads.size(); ++k) labels[k].push_back(latentdecode::predict_labels(*heads[k], bundle));
  }
  AnnotatedBatch out;
  out.images = torch::cat(images);
  for (auto& l : labels) out.labels.push_back(torch::cat(l));
  return out;
}

std::vector<SyntheticTile> AnnotatingGenerator::generate(const std::vector<GenerationRequest>& requests, long chunk) {
  std::lock_guard lock(mutex_);
  const int t_star = height_meta_.t_star;
  auto batch = sample_annotated(*backbone_, branch_, {&height_head_, &energy_head_}, t_star, requests, chunk);
  const std::string& bb = backbone_digest_;
  std::vector<SyntheticTile> out;
  out.reserve(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    const long k = static_cast<long>(i);
    SyntheticTile s;
    s.provenance = {bb, control_digest_, height_digest_, energy_digest_, r.seed, r.source_tile_id, t_star};
    s.tile.tile_id = "syn-" + (r.source_tile_id.empty() ? std::string("free") : r.source_tile_id) + "-" +
                     std::to_string(r.seed);
    s.tile.city = r.city;
    s.tile.image = diffcore::tensor_to_image(batch.images[k]);
    s.tile.constraints = r.constraints;
    s.tile.density = r.density;
    s.height_classes.labels = diffcore::tensor_to_labels(batch.labels[0][k]);
    s.height_classes.n_classes = 5;
    s.height_classes.bin_edges = height_meta_.bin_edges;
    s.height_classes.source = tiles::ClassSource::height;
    s.energy_classes.labels = diffcore::tensor_to_labels(batch.labels[1][k]);
    s.energy_classes.n_classes = 4;
    s.energy_classes.bin_edges = energy_meta_.bin_edges;
    s.energy_classes.source = tiles::ClassSource::energy;
    s.tile.height = representative_layer(s.height_classes.labels, height_meta_.representative);
    s.tile.energy = representative_layer(s.energy_classes.labels, energy_meta_.representative);
    out.push_back(std::move(s));
  }
  return out;
}

SyntheticTile AnnotatingGenerator::generate_one(const GenerationRequest& request) {
  return std::move(generate({request}, 1).front());
}

std::vector<double> class_marginals(const std::vector<tiles::ClassMap>& maps, int n_classes) {
  std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
  double total = 0.0;
  for (const auto& m : maps) {
    for (auto v : m.labels.values()) {
      if (v >= n_classes) throw Error(ErrorKind::invalid_argument, "class_marginals: label out of range");
      counts[v] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (auto& c : counts) c /= total;
  }
  return counts;
}

std::vector<double> class_marginals(const torch::Tensor& labels, const torch::Tensor& valid, int n_classes) {
  auto l = labels.flatten();
  if (valid.defined()) l = l.masked_select(valid.flatten().to(torch::kBool));
  auto counts = torch::bincount(l, {}, n_classes).to(torch::kFloat64);
  double total = counts.sum().item<double>();
  std::vector<double> out(static_cast<std::size_t>(n_classes), 0.0);
  for (int c = 0; c < n_classes; ++c) out[static_cast<std::size_t>(c)] = total > 0 ? counts[c].item<double>() / total : 0.0;
  return out;
}

double max_marginal_gap(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::shape_mismatch, "marginal gap: class counts differ");
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a[i] - b[i]) * 100.0);
  return gap;
}

}  // namespace sense::synthlab
