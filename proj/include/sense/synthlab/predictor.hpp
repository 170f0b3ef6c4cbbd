#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sense/energymetrics/report.hpp"
#include "sense/latentdecode/decode.hpp"

namespace sense::synthlab {

// Supervised image -> class-map training data.
struct SegmentationData {
  torch::Tensor images;  // [N, 3, H, W] in [0, 1]
  torch::Tensor labels;  // [N, H, W] int64
  torch::Tensor valid;   // [N, H, W] bool
  std::vector<std::string> tile_ids;

  std::size_t size() const { return tile_ids.size(); }
  static SegmentationData from_labeled(const latentdecode::LabeledSet& set);
  SegmentationData subset(const std::vector<std::size_t>& rows) const;
  static SegmentationData concat(const SegmentationData& a, const SegmentationData& b);
};

struct PredictorConfig {
  int n_classes = 4;
  int width = 16;
};

// Small encoder-decoder with two downsampling stages and skip connections.
class ReferencePredictorImpl : public torch::nn::Module {
 public:
  explicit ReferencePredictorImpl(const PredictorConfig& config = {});
  torch::Tensor forward(const torch::Tensor& images);  // logits [B, n_classes, H, W]
  const PredictorConfig& config() const { return config_; }

 private:
  torch::nn::Sequential block(int in, int out);
  PredictorConfig config_;
  torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::Conv2d down1_{nullptr}, down2_{nullptr}, up2_{nullptr}, up1_{nullptr}, classify_{nullptr};
};
TORCH_MODULE(ReferencePredictor);

struct PredictorTrainOptions {
  int steps = 400;
  int batch_size = 16;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  bool class_weighted = true;
  std::function<void(int step, double loss)> on_step;
};

// Initialises from `options.seed` and trains with the decoder-head loss
// (class-weighted cross-entropy plus Dice) for a fixed step budget.
ReferencePredictor train_reference_predictor(const SegmentationData& data, const PredictorConfig& config,
                                             const PredictorTrainOptions& options,
                                             std::vector<double>* losses = nullptr);

// Argmax labels [N, H, W].
torch::Tensor predict_labels(ReferencePredictor& predictor, const torch::Tensor& images, long chunk = 64);

// Confusion-based scores of label tensors, skipping invalid pixels. Shared
// by decoder-head and reference-predictor evaluation.
metrics::SegmentationMetrics segmentation_metrics(const torch::Tensor& pred, const torch::Tensor& truth,
                                                  const torch::Tensor& valid, int n_classes,
                                                  bool foreground_only = false);

// Energy predictions for real tiles evaluated through energymetrics.
metrics::CalibrationReport energy_report(const torch::Tensor& pred, const std::vector<tiles::Tile>& tiles,
                                         const metrics::EnergyBins& bins);

}  // namespace sense::synthlab
