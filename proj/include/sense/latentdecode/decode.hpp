#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sense/diffcore/backbone.hpp"
#include "sense/geocontrol/control.hpp"
#include "sense/tilestore/tile.hpp"
#include "sense/tilestore/transform.hpp"

namespace sense::latentdecode {

using diffcore::Backbone;
using geocontrol::ControlBranch;

// Decoder block outputs of one U-Net pass and their fusion: every map is
// bilinearly upsampled to the finest resolution and concatenated along
// channels in block order D0, D1, D2, D3.
struct FeatureBundle {
  std::vector<torch::Tensor> features;
  torch::Tensor fused;
  int t_star = 0;
};

torch::Tensor fuse_features(const std::vector<torch::Tensor>& features);

// Seed of the noising draw used for a tile's features in a given epoch.
std::uint64_t feature_noise_seed(const std::string& tile_id, int epoch);

// Noises clean latents z0 to t_star (one seed per element) and runs one
// denoising pass, capturing the decoder features. `branch` may be null.
FeatureBundle extract_features(Backbone& backbone, ControlBranch* branch, const torch::Tensor& z0,
                               const diffcore::ConditioningBundle& cond, int t_star,
                               const std::vector<std::uint64_t>& noise_seeds);
// Wraps captured features from a sampling trajectory.
FeatureBundle bundle_from_features(std::vector<torch::Tensor> features, int t_star);

enum class HeadKind { height, energy };
const char* to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);
int head_classes(HeadKind kind);

struct HeadConfig {
  HeadKind kind = HeadKind::energy;
  int in_channels = 384;
  int width = 96;
  int heads = 4;
  int out_size = 64;
};

// Head sized for a backbone: fused channel count and tile resolution.
HeadConfig head_config_for(const Backbone& backbone, HeadKind kind);

// Lightweight multi-scale head: channel projection, parallel local and
// dilated convolutions, global self-attention over the fused grid, a
// per-cell classifier, and bilinear upsampling to the tile resolution.
class DecoderHeadImpl : public torch::nn::Module {
 public:
  explicit DecoderHeadImpl(const HeadConfig& config = {});
  torch::Tensor forward(const torch::Tensor& fused);  // logits [B, n_classes, out, out]
  const HeadConfig& config() const { return config_; }
  int n_classes() const { return head_classes(config_.kind); }

 private:
  HeadConfig config_;
  torch::nn::Conv2d proj_{nullptr}, local_{nullptr}, dilated_{nullptr}, classify_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::LayerNorm ln_{nullptr};
  diffcore::Attention attn_{nullptr};
};
TORCH_MODULE(DecoderHead);

// Per-pixel class probabilities [B, n, H, W]; rows sum to 1.
torch::Tensor decode_probabilities(DecoderHead& head, const FeatureBundle& bundle);
torch::Tensor decode_height(DecoderHead& head, const FeatureBundle& bundle);
torch::Tensor decode_energy(DecoderHead& head, const FeatureBundle& bundle);
// Argmax labels [B, H, W] (int64).
torch::Tensor predict_labels(DecoderHead& head, const FeatureBundle& bundle);

inline constexpr double kDiceSmoothing = 1.0;

struct LossTerms {
  torch::Tensor cross_entropy;
  torch::Tensor dice;
  torch::Tensor total;
};

// Mean over valid pixels of -sum_c w_c y_c log p_c, plus the class-mean
// soft Dice loss with smoothing `dice_eps`. `probs` [B, n, H, W], `target`
// [B, H, W] int64, `valid` [B, H, W] bool or undefined. Empty weights mean
// uniform weights.
torch::Tensor energy_loss(const torch::Tensor& probs, const torch::Tensor& target, const std::vector<double>& weights,
                          const torch::Tensor& valid = {}, double dice_eps = kDiceSmoothing);
LossTerms energy_loss_terms(const torch::Tensor& probs, const torch::Tensor& target,
                            const std::vector<double>& weights, const torch::Tensor& valid = {},
                            double dice_eps = kDiceSmoothing);
// Same loss computed from logits with a stable log-softmax.
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                const std::vector<double>& weights, const torch::Tensor& valid = {},
                                double dice_eps = kDiceSmoothing);

// w_c = N / (n_classes * n_c), rescaled to mean 1. Throws naming any class
// with no pixels.
std::vector<double> fit_class_weights(const std::vector<tiles::ClassMap>& maps, int n_classes);
std::vector<double> fit_class_weights(const std::vector<std::uint64_t>& counts);

// Tiles with per-pixel labels for head training.
struct LabeledSet {
  diffcore::ImageCorpus corpus;
  torch::Tensor labels;  // [N, H, W] int64
  torch::Tensor valid;   // [N, H, W] bool

  std::size_t size() const { return corpus.size(); }
  LabeledSet subset(const std::vector<std::size_t>& rows) const;
};

// Labels from the tiles' height or energy layers under frozen bin edges.
// Energy pixels carrying the null sentinel are marked invalid.
LabeledSet labeled_set_from_tiles(const std::vector<tiles::Tile>& tiles, HeadKind kind, const tiles::BinEdges& bins);

struct HeadTrainOptions {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int t_star = 5;
  bool class_weighted = true;
  std::vector<double> class_weights;  // fitted from the labels when empty and weighted
  std::function<void(int epoch, double loss)> on_epoch;
};

struct HeadTrainLog {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::vector<double> class_weights;
  std::string backbone_digest_before, backbone_digest_after;
  std::string control_digest_before, control_digest_after;
};

HeadTrainLog train_head(Backbone& backbone, ControlBranch& branch, DecoderHead& head, const LabeledSet& data,
                        const HeadTrainOptions& options);

// Labels for a corpus of real tiles: features at t_star with the epoch-0
// noise draw, then argmax.
torch::Tensor predict_real(Backbone& backbone, ControlBranch& branch, DecoderHead& head,
                           const diffcore::ImageCorpus& corpus, int t_star, long chunk = 32);

struct HeadCheckpointMeta {
  HeadConfig config;
  int t_star = 0;
  std::string backbone_digest;
  std::string control_digest;
  std::vector<double> class_weights;
  std::vector<double> bin_edges;
  std::vector<double> representative;  // per-class representative value (log domain for energy)
};

void save_head(const std::filesystem::path& path, DecoderHead& head, const HeadCheckpointMeta& meta);
// Refuses checkpoints trained against other backbone or control weights.
DecoderHead load_head(const std::filesystem::path& path, const Backbone& backbone, ControlBranch& branch,
                      HeadCheckpointMeta* meta_out = nullptr);

}  // namespace sense::latentdecode
