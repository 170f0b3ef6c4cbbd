#include "sense/diffcore/layers.hpp"

#include <cmath>

namespace sense::diffcore {

namespace F = torch::nn::functional;

torch::nn::GroupNorm group_norm(int channels) {
  int groups = channels % 8 == 0 ? 8 : 1;
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels).eps(1e-6));
}

torch::nn::Conv2d conv3x3(int in, int out, int stride, int dilation) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(dilation).dilation(dilation));
}

torch::nn::Conv2d conv1x1(int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); }

torch::Tensor timestep_features(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

AttentionImpl::AttentionImpl(int dim, int context_dim, int heads) : heads_(heads) {
  q_ = register_module("q", torch::nn::Linear(torch::nn::LinearOptions(dim, dim).bias(false)));
  k_ = register_module("k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, dim).bias(false)));
  v_ = register_module("v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, dim).bias(false)));
  out_ = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                     const torch::Tensor& context_pad) {
  const auto B = x.size(0), N = x.size(1), M = context.size(1), D = x.size(2);
  const long hd = D / heads_;
  auto split = [&](const torch::Tensor& t, long len) { return t.view({B, len, heads_, hd}).transpose(1, 2); };
  auto q = split(q_->forward(x), N);
  auto k = split(k_->forward(context), M);
  auto v = split(v_->forward(context), M);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  if (context_pad.defined()) {
    scores = scores.masked_fill(context_pad.view({B, 1, 1, M}), -std::numeric_limits<float>::infinity());
  }
  auto attn = torch::softmax(scores, -1);
  auto y = torch::matmul(attn, v).transpose(1, 2).contiguous().view({B, N, D});
  return out_->forward(y);
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int temb_dim) {
  norm1_ = register_module("norm1", group_norm(in_channels));
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
  norm2_ = register_module("norm2", group_norm(out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  if (temb_dim > 0) temb_proj_ = register_module("temb_proj", torch::nn::Linear(temb_dim, out_channels));
  if (in_channels != out_channels) skip_ = register_module("skip", conv1x1(in_channels, out_channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_->forward(F::silu(norm1_->forward(x)));
  if (temb_proj_ && temb.defined()) h = h + temb_proj_->forward(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_->forward(F::silu(norm2_->forward(h)));
  return (skip_ ? skip_->forward(x) : x) + h;
}

SpatialTransformerImpl::SpatialTransformerImpl(int channels, int context_dim, int heads) {
  norm_ = register_module("norm", group_norm(channels));
  proj_in_ = register_module("proj_in", conv1x1(channels, channels));
  ln1_ = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  self_attn_ = register_module("self_attn", Attention(channels, channels, heads));
  ln2_ = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  cross_attn_ = register_module("cross_attn", Attention(channels, context_dim, heads));
  ln3_ = register_module("ln3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  ff1_ = register_module("ff1", torch::nn::Linear(channels, channels * 2));
  ff2_ = register_module("ff2", torch::nn::Linear(channels * 2, channels));
  proj_out_ = register_module("proj_out", conv1x1(channels, channels));
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                              const torch::Tensor& context_pad) {
  const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  auto h = proj_in_->forward(norm_->forward(x)).flatten(2).transpose(1, 2);
  auto n1 = ln1_->forward(h);
  h = h + self_attn_->forward(n1, n1);
  h = h + cross_attn_->forward(ln2_->forward(h), context, context_pad);
  h = h + ff2_->forward(F::gelu(ff1_->forward(ln3_->forward(h))));
  h = h.transpose(1, 2).reshape({B, C, H, W});
  return x + proj_out_->forward(h);
}

}  // namespace sense::diffcore
