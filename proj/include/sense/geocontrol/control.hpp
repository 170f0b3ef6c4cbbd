#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "sense/diffcore/backbone.hpp"

namespace sense::geocontrol {

using diffcore::Backbone;
using diffcore::ConditioningBundle;
using diffcore::ControlResiduals;

// Strided conv stack from the H x W constraint mask down to latent
// resolution, ending in a zero-initialized convolution.
class HintEncoderImpl : public torch::nn::Module {
 public:
  HintEncoderImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& mask);
  torch::nn::Conv2d zero_out{nullptr};

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(HintEncoder);

// Trainable copy of the backbone encoder and bottleneck. Each skip site and
// the bottleneck output pass through a zero-initialized 1x1 convolution
// before being added to the backbone.
class ControlBranchImpl : public torch::nn::Module {
 public:
  explicit ControlBranchImpl(const diffcore::UNetConfig& config, int constraint_channels = 3);
  ControlResiduals forward(const torch::Tensor& zt, const torch::Tensor& t, const torch::Tensor& context,
                           const torch::Tensor& context_pad, const torch::Tensor& constraints);
  // Parameters of every zero convolution (hint output, skips, bottleneck).
  std::vector<torch::Tensor> zero_parameters();

  HintEncoder hint{nullptr};
  diffcore::UNetEncoder encoder{nullptr};
  diffcore::UNetMiddle middle{nullptr};
  torch::nn::ModuleList zero_convs{nullptr};
};
TORCH_MODULE(ControlBranch);

// New branch whose encoder and bottleneck copy the backbone's weights.
// Other layers are initialised from `seed`.
ControlBranch make_control_branch(Backbone& backbone, std::uint64_t seed);

// eps prediction of the backbone with branch residuals injected.
// cond.constraints must be [B, 3, f*h, f*w] for latents [B, c, h, w].
torch::Tensor controlled_forward(Backbone& backbone, ControlBranch& branch, const torch::Tensor& zt,
                                 const torch::Tensor& t, const ConditioningBundle& cond,
                                 std::vector<torch::Tensor>* features = nullptr);
diffcore::EpsModel controlled_eps_model(Backbone& backbone, ControlBranch& branch);

struct ControlTrainLog : diffcore::TrainLog {
  std::string backbone_digest_before;
  std::string backbone_digest_after;
};

// Optimises the noise-prediction loss over branch parameters only; the
// backbone is frozen for the duration.
ControlTrainLog train_control(Backbone& backbone, ControlBranch& branch, const diffcore::ImageCorpus& corpus,
                              const diffcore::TrainOptions& options);

double evaluate_control_loss(Backbone& backbone, ControlBranch& branch, const torch::Tensor& latents,
                             const diffcore::ImageCorpus& corpus, std::uint64_t seed);

// Checkpoint carrying the branch weights and the digest of the backbone it
// was trained against. Loading against a different backbone is refused.
void save_control(const std::filesystem::path& path, ControlBranch& branch, const Backbone& backbone);
ControlBranch load_control(const std::filesystem::path& path, const Backbone& backbone);

// Samples images for each (constraint mask, prompt, seed) with the
// controlled model; returns [B, 3, H, W] in [0, 1].
torch::Tensor generate_images(Backbone& backbone, ControlBranch& branch, const torch::Tensor& constraints,
                              const std::vector<std::string>& prompts, const std::vector<std::uint64_t>& seeds,
                              long chunk = 32);

// Pooled IoU between input road masks and roads re-detected from images.
double constraint_fidelity(const torch::Tensor& images, const torch::Tensor& constraints);

}  // namespace sense::geocontrol
