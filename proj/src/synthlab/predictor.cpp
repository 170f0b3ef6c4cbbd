#include "sense/synthlab/predictor.hpp"

#include <algorithm>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"

namespace sense::synthlab {

namespace F = torch::nn::functional;

SegmentationData SegmentationData::from_labeled(const latentdecode::LabeledSet& set) {
  return {set.corpus.images, set.labels, set.valid, set.corpus.tile_ids};
}

SegmentationData SegmentationData::subset(const std::vector<std::size_t>& rows) const {
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  auto index = torch::tensor(idx, torch::kInt64);
  SegmentationData s{images.index_select(0, index), labels.index_select(0, index), valid.index_select(0, index), {}};
  for (auto r : rows) s.tile_ids.push_back(tile_ids.at(r));
  return s;
}

SegmentationData SegmentationData::concat(const SegmentationData& a, const SegmentationData& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  SegmentationData s{torch::cat({a.images, b.images}), torch::cat({a.labels, b.labels}), torch::cat({a.valid, b.valid}),
                     a.tile_ids};
  s.tile_ids.insert(s.tile_ids.end(), b.tile_ids.begin(), b.tile_ids.end());
  return s;
}

torch::nn::Sequential ReferencePredictorImpl::block(int in, int out) {
  return torch::nn::Sequential(diffcore::conv3x3(in, out), diffcore::group_norm(out), torch::nn::SiLU(),
                               diffcore::conv3x3(out, out), diffcore::group_norm(out), torch::nn::SiLU());
}

ReferencePredictorImpl::ReferencePredictorImpl(const PredictorConfig& config) : config_(config) {
  if (config.n_classes < 2 || config.width < 8) throw Error(ErrorKind::invalid_argument, "predictor: bad config");
  const int w = config.width;
  enc1_ = register_module("enc1", block(3, w));
  down1_ = register_module("down1", diffcore::conv3x3(w, 2 * w, 2));
  enc2_ = register_module("enc2", block(2 * w, 2 * w));
  down2_ = register_module("down2", diffcore::conv3x3(2 * w, 4 * w, 2));
  enc3_ = register_module("enc3", block(4 * w, 4 * w));
  up2_ = register_module("up2", diffcore::conv3x3(4 * w, 2 * w));
  dec2_ = register_module("dec2", block(4 * w, 2 * w));
  up1_ = register_module("up1", diffcore::conv3x3(2 * w, w));
  dec1_ = register_module("dec1", block(2 * w, w));
  classify_ = register_module("classify", diffcore::conv1x1(w, config.n_classes));
}

torch::Tensor ReferencePredictorImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) % 4 != 0 || images.size(3) % 4 != 0) {
    throw Error(ErrorKind::shape_mismatch, "predictor: expected [B, 3, H, W] with H, W divisible by 4");
  }
  auto up = [](const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  };
  auto x = images * 2.0 - 1.0;
  auto e1 = enc1_->forward(x);
  auto e2 = enc2_->forward(down1_->forward(e1));
  auto e3 = enc3_->forward(down2_->forward(e2));
  auto d2 = dec2_->forward(torch::cat({up2_->forward(up(e3)), e2}, 1));
  auto d1 = dec1_->forward(torch::cat({up1_->forward(up(d2)), e1}, 1));
  return classify_->forward(d1);
}

ReferencePredictor train_reference_predictor(const SegmentationData& data, const PredictorConfig& config,
                                             const PredictorTrainOptions& options, std::vector<double>* losses) {
  if (data.size() == 0) throw Error(ErrorKind::invalid_argument, "reference predictor: empty corpus");
  if (options.steps < 1 || options.batch_size < 1) {
    throw Error(ErrorKind::invalid_argument, "reference predictor: steps and batch size must be positive");
  }
  torch::manual_seed(options.seed);
  ReferencePredictor model(config);
  std::vector<double> weights;
  if (options.class_weighted) {
    // Classes missing from a small subset count as one pixel so the fit stays defined.
    auto counts = torch::bincount(data.labels.masked_select(data.valid), {}, config.n_classes);
    std::vector<std::uint64_t> c;
    for (int i = 0; i < config.n_classes; ++i) {
      c.push_back(std::max<std::uint64_t>(1, static_cast<std::uint64_t>(counts[i].item<std::int64_t>())));
    }
    weights = latentdecode::fit_class_weights(c);
  }
  auto gen = diffcore::make_generator(options.seed ^ 0x9e3779b97f4a7c15ULL);
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(options.lr).weight_decay(1e-4));
  model->train(true);
  const long n = static_cast<long>(data.size());
  const long bs = std::min<long>(n, options.batch_size);
  auto order = torch::randperm(n, gen, torch::kInt64);
  long cursor = 0;
  for (int step = 0; step < options.steps; ++step) {
    if (cursor + bs > n) {
      order = torch::randperm(n, gen, torch::kInt64);
      cursor = 0;
    }
    auto idx = order.slice(0, cursor, cursor + bs);
    cursor += bs;
    auto images = data.images.index_select(0, idx);
    auto labels = data.labels.index_select(0, idx);
    auto valid = data.valid.index_select(0, idx);
    // Random flips and quarter turns; labels follow the image.
    const auto k = torch::randint(0, 8, {1}, gen, torch::kInt64).item<std::int64_t>();
    if (k & 4) {
      images = images.flip({3});
      labels = labels.flip({2});
      valid = valid.flip({2});
    }
    images = images.rot90(k & 3, {2, 3});
    labels = labels.rot90(k & 3, {1, 2});
    valid = valid.rot90(k & 3, {1, 2});
    auto loss = latentdecode::segmentation_loss(model->forward(images), labels, weights, valid);
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double l = loss.item<double>();
    if (losses) losses->push_back(l);
    if (options.on_step) options.on_step(step, l);
  }
  model->train(false);
  return model;
}

torch::Tensor predict_labels(ReferencePredictor& predictor, const torch::Tensor& images, long chunk) {
  torch::NoGradGuard no_grad;
  predictor->train(false);
  std::vector<torch::Tensor> out;
  for (long b = 0; b < images.size(0); b += chunk) {
    out.push_back(predictor->forward(images.slice(0, b, std::min(images.size(0), b + chunk))).argmax(1));
  }
  return torch::cat(out);
}

metrics::SegmentationMetrics segmentation_metrics(const torch::Tensor& pred, const torch::Tensor& truth,
                                                  const torch::Tensor& valid, int n_classes, bool foreground_only) {
  if (pred.sizes() != truth.sizes() || (valid.defined() && valid.sizes() != truth.sizes())) {
    throw Error(ErrorKind::shape_mismatch, "segmentation metrics: prediction and truth shapes differ");
  }
  metrics::ConfusionAccumulator acc(n_classes);
  for (long i = 0; i < pred.size(0); ++i) {
    auto p = diffcore::tensor_to_labels(pred[i]);
    auto t = diffcore::tensor_to_labels(truth[i]);
    if (valid.defined()) {
      auto v = diffcore::tensor_to_labels(valid[i].to(torch::kUInt8));
      acc.add(p, t, &v);
    } else {
      acc.add(p, t);
    }
  }
  return metrics::metrics_from_confusion(acc.confusion(), foreground_only);
}

metrics::CalibrationReport energy_report(const torch::Tensor& pred, const std::vector<tiles::Tile>& tiles,
                                         const metrics::EnergyBins& bins) {
  if (pred.size(0) != static_cast<long>(tiles.size())) {
    throw Error(ErrorKind::shape_mismatch, "energy report: one prediction per tile expected");
  }
  std::vector<metrics::EnergyPair> pairs;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    metrics::EnergyPair p;
    p.tile_id = tiles[i].tile_id;
    p.pred.labels = diffcore::tensor_to_labels(pred[static_cast<long>(i)]);
    p.pred.n_classes = 4;
    p.pred.bin_edges = bins.edges;
    p.pred.source = tiles::ClassSource::energy;
    p.truth_log = tiles[i].energy;
    pairs.push_back(std::move(p));
  }
  return metrics::evaluate_energy(pairs, bins);
}

}  // namespace sense::synthlab
