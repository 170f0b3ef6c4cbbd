#pragma once

#include <torch/torch.h>

namespace sense::diffcore {

torch::nn::GroupNorm group_norm(int channels);

// Sinusoidal embedding of integer timesteps, [B] -> [B, dim].
torch::Tensor timestep_features(const torch::Tensor& t, int dim);

// Multi-head scaled dot-product attention. `context_pad` is a [B, M] bool
// tensor marking padded context positions, or undefined.
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(int dim, int context_dim, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context, const torch::Tensor& context_pad = {});

 private:
  int heads_;
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Attention);

class ResBlockImpl : public torch::nn::Module {
 public:
  // temb_dim = 0 builds an unconditioned block.
  ResBlockImpl(int in_channels, int out_channels, int temb_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear temb_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

// Self-attention over spatial tokens, cross-attention to the text
// sequence, then a feed-forward layer; residual throughout.
class SpatialTransformerImpl : public torch::nn::Module {
 public:
  SpatialTransformerImpl(int channels, int context_dim, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context, const torch::Tensor& context_pad);

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d proj_in_{nullptr}, proj_out_{nullptr};
  torch::nn::LayerNorm ln1_{nullptr}, ln2_{nullptr}, ln3_{nullptr};
  Attention self_attn_{nullptr}, cross_attn_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
};
TORCH_MODULE(SpatialTransformer);

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1, int dilation = 1);
torch::nn::Conv2d conv1x1(int in, int out);

}  // namespace sense::diffcore
