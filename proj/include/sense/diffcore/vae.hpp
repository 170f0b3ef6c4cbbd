#pragma once

#include <torch/torch.h>

#include "sense/diffcore/layers.hpp"

namespace sense::diffcore {

struct VaeConfig {
  int image_channels = 3;
  int latent_channels = 4;
  int downsample = 4;  // spatial factor f
  int width = 64;
  int blocks = 2;
};

struct Posterior {
  torch::Tensor mean;
  torch::Tensor logvar;
};

// Space-to-depth autoencoder: the f x f pixel blocks are folded into
// channels, processed at latent resolution, and unfolded on decode.
class VaeImpl : public torch::nn::Module {
 public:
  explicit VaeImpl(const VaeConfig& config = {});
  // images [B, 3, H, W] in [0, 1] -> posterior at [B, c, H/f, W/f].
  Posterior encode(const torch::Tensor& images);
  // latents -> images (unclamped).
  torch::Tensor decode(const torch::Tensor& latents);
  const VaeConfig& config() const { return config_; }

 private:
  VaeConfig config_;
  torch::nn::Conv2d enc_in_{nullptr}, enc_out_{nullptr}, dec_in_{nullptr}, dec_out_{nullptr};
  torch::nn::ModuleList enc_blocks_{nullptr}, dec_blocks_{nullptr};
  torch::nn::GroupNorm enc_norm_{nullptr}, dec_norm_{nullptr};
};
TORCH_MODULE(Vae);

struct VaeLoss {
  torch::Tensor total;
  torch::Tensor reconstruction;
  torch::Tensor kl;
};

VaeLoss vae_loss(Vae& vae, const torch::Tensor& images, double kl_weight, torch::Generator& gen);

}  // namespace sense::diffcore
