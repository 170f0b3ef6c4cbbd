#pragma once

#include <torch/torch.h>

#include <vector>

#include "sense/diffcore/layers.hpp"

namespace sense::diffcore {

struct UNetConfig {
  int latent_channels = 4;
  int width = 64;      // channels at latent resolution
  int deep_width = 128;  // channels at 1/2 and 1/4 latent resolution
  int context_dim = 64;
  int heads = 4;
  int time_dim = 128;
};

// Skip activations handed from the encoder to the decoder, in order
// s0 (conv_in), sA (full res), sB (1/2), sC (1/4).
struct EncoderState {
  std::vector<torch::Tensor> skips;
  torch::Tensor temb;
};

// Additive residuals for each skip site and the bottleneck output.
struct ControlResiduals {
  std::vector<torch::Tensor> skips;
  torch::Tensor middle;
};

class UNetEncoderImpl : public torch::nn::Module {
 public:
  explicit UNetEncoderImpl(const UNetConfig& config = {});
  // `input_residual` (optional) is added to the conv_in output.
  EncoderState forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context,
                       const torch::Tensor& context_pad, const torch::Tensor& input_residual = {});

 private:
  UNetConfig config_;
  torch::nn::Linear time1_{nullptr}, time2_{nullptr};
  torch::nn::Conv2d conv_in_{nullptr}, down1_{nullptr}, down2_{nullptr};
  ResBlock res_a_{nullptr}, res_b_{nullptr}, res_c_{nullptr};
  SpatialTransformer attn_b_{nullptr}, attn_c_{nullptr};
};
TORCH_MODULE(UNetEncoder);

class UNetMiddleImpl : public torch::nn::Module {
 public:
  explicit UNetMiddleImpl(const UNetConfig& config = {});
  torch::Tensor forward(const torch::Tensor& h, const torch::Tensor& temb, const torch::Tensor& context,
                        const torch::Tensor& context_pad);

 private:
  ResBlock res1_{nullptr}, res2_{nullptr};
  SpatialTransformer attn_{nullptr};
};
TORCH_MODULE(UNetMiddle);

// Decoder blocks D0 (1/4 res), D1 (1/2 res), D2 and D3 (full res). Their
// outputs are the multi-scale features, in that order.
class UNetDecoderImpl : public torch::nn::Module {
 public:
  explicit UNetDecoderImpl(const UNetConfig& config = {});
  torch::Tensor forward(const torch::Tensor& middle, const std::vector<torch::Tensor>& skips,
                        const torch::Tensor& temb, const torch::Tensor& context, const torch::Tensor& context_pad,
                        std::vector<torch::Tensor>* features = nullptr);
  std::vector<int> feature_channels() const;

 private:
  UNetConfig config_;
  ResBlock d0_{nullptr}, d1_{nullptr}, d2_{nullptr}, d3_{nullptr};
  SpatialTransformer attn0_{nullptr}, attn1_{nullptr};
  torch::nn::Conv2d up0_{nullptr}, up1_{nullptr}, out_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
};
TORCH_MODULE(UNetDecoder);

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& config = {});
  // Predicts noise for latents z at timesteps t [B]. `control` residuals
  // are added into the skips and bottleneck; `features` receives the
  // decoder block outputs.
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context,
                        const torch::Tensor& context_pad, const ControlResiduals* control = nullptr,
                        std::vector<torch::Tensor>* features = nullptr);

  const UNetConfig& config() const { return config_; }
  UNetEncoder encoder{nullptr};
  UNetMiddle middle{nullptr};
  UNetDecoder decoder{nullptr};

 private:
  UNetConfig config_;
};
TORCH_MODULE(UNet);

}  // namespace sense::diffcore
