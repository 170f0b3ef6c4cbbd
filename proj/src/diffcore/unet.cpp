#include "sense/diffcore/unet.hpp"

#include "sense/error.hpp"

namespace sense::diffcore {

namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

UNetEncoderImpl::UNetEncoderImpl(const UNetConfig& c) : config_(c) {
  time1_ = register_module("time1", torch::nn::Linear(c.width, c.time_dim));
  time2_ = register_module("time2", torch::nn::Linear(c.time_dim, c.time_dim));
  conv_in_ = register_module("conv_in", conv3x3(c.latent_channels, c.width));
  res_a_ = register_module("res_a", ResBlock(c.width, c.width, c.time_dim));
  down1_ = register_module("down1", conv3x3(c.width, c.width, 2));
  res_b_ = register_module("res_b", ResBlock(c.width, c.deep_width, c.time_dim));
  attn_b_ = register_module("attn_b", SpatialTransformer(c.deep_width, c.context_dim, c.heads));
  down2_ = register_module("down2", conv3x3(c.deep_width, c.deep_width, 2));
  res_c_ = register_module("res_c", ResBlock(c.deep_width, c.deep_width, c.time_dim));
  attn_c_ = register_module("attn_c", SpatialTransformer(c.deep_width, c.context_dim, c.heads));
}

EncoderState UNetEncoderImpl::forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context,
                                      const torch::Tensor& context_pad, const torch::Tensor& input_residual) {
  if (z.dim() != 4 || z.size(1) != config_.latent_channels || z.size(2) % 4 != 0 || z.size(3) % 4 != 0) {
    throw Error(ErrorKind::shape_mismatch, "unet: expected [B, latent_channels, h, w] with h, w divisible by 4");
  }
  EncoderState s;
  s.temb = time2_->forward(F::silu(time1_->forward(timestep_features(t, config_.width))));
  auto h = conv_in_->forward(z);
  if (input_residual.defined()) h = h + input_residual;
  s.skips.push_back(h);
  h = res_a_->forward(h, s.temb);
  s.skips.push_back(h);
  h = attn_b_->forward(res_b_->forward(down1_->forward(h), s.temb), context, context_pad);
  s.skips.push_back(h);
  h = attn_c_->forward(res_c_->forward(down2_->forward(h), s.temb), context, context_pad);
  s.skips.push_back(h);
  return s;
}

UNetMiddleImpl::UNetMiddleImpl(const UNetConfig& c) {
  res1_ = register_module("res1", ResBlock(c.deep_width, c.deep_width, c.time_dim));
  attn_ = register_module("attn", SpatialTransformer(c.deep_width, c.context_dim, c.heads));
  res2_ = register_module("res2", ResBlock(c.deep_width, c.deep_width, c.time_dim));
}

torch::Tensor UNetMiddleImpl::forward(const torch::Tensor& h, const torch::Tensor& temb, const torch::Tensor& context,
                                      const torch::Tensor& context_pad) {
  return res2_->forward(attn_->forward(res1_->forward(h, temb), context, context_pad), temb);
}

UNetDecoderImpl::UNetDecoderImpl(const UNetConfig& c) : config_(c) {
  d0_ = register_module("d0", ResBlock(2 * c.deep_width, c.deep_width, c.time_dim));
  attn0_ = register_module("attn0", SpatialTransformer(c.deep_width, c.context_dim, c.heads));
  up0_ = register_module("up0", conv3x3(c.deep_width, c.deep_width));
  d1_ = register_module("d1", ResBlock(2 * c.deep_width, c.deep_width, c.time_dim));
  attn1_ = register_module("attn1", SpatialTransformer(c.deep_width, c.context_dim, c.heads));
  up1_ = register_module("up1", conv3x3(c.deep_width, c.deep_width));
  d2_ = register_module("d2", ResBlock(c.deep_width + c.width, c.width, c.time_dim));
  d3_ = register_module("d3", ResBlock(2 * c.width, c.width, c.time_dim));
  out_norm_ = register_module("out_norm", group_norm(c.width));
  out_ = register_module("out", conv3x3(c.width, c.latent_channels));
}

std::vector<int> UNetDecoderImpl::feature_channels() const {
  return {config_.deep_width, config_.deep_width, config_.width, config_.width};
}

torch::Tensor UNetDecoderImpl::forward(const torch::Tensor& middle, const std::vector<torch::Tensor>& skips,
                                       const torch::Tensor& temb, const torch::Tensor& context,
                                       const torch::Tensor& context_pad, std::vector<torch::Tensor>* features) {
  auto f0 = attn0_->forward(d0_->forward(torch::cat({middle, skips[3]}, 1), temb), context, context_pad);
  auto f1 = attn1_->forward(d1_->forward(torch::cat({up0_->forward(upsample2(f0)), skips[2]}, 1), temb), context,
                            context_pad);
  auto f2 = d2_->forward(torch::cat({up1_->forward(upsample2(f1)), skips[1]}, 1), temb);
  auto f3 = d3_->forward(torch::cat({f2, skips[0]}, 1), temb);
  if (features) *features = {f0, f1, f2, f3};
  return out_->forward(F::silu(out_norm_->forward(f3)));
}

UNetImpl::UNetImpl(const UNetConfig& config) : config_(config) {
  encoder = register_module("encoder", UNetEncoder(config));
  middle = register_module("middle", UNetMiddle(config));
  decoder = register_module("decoder", UNetDecoder(config));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context,
                                const torch::Tensor& context_pad, const ControlResiduals* control,
                                std::vector<torch::Tensor>* features) {
  auto state = encoder->forward(z, t, context, context_pad);
  auto m = middle->forward(state.skips.back(), state.temb, context, context_pad);
  if (control) {
    if (control->skips.size() != state.skips.size()) {
      throw Error(ErrorKind::shape_mismatch, "unet: control residual count differs from skip count");
    }
    for (std::size_t i = 0; i < state.skips.size(); ++i) state.skips[i] = state.skips[i] + control->skips[i];
    m = m + control->middle;
  }
  return decoder->forward(m, state.skips, state.temb, context, context_pad, features);
}

}  // namespace sense::diffcore
