#include "sense/diffcore/vae.hpp"

#include "sense/error.hpp"

namespace sense::diffcore {

namespace F = torch::nn::functional;

VaeImpl::VaeImpl(const VaeConfig& config) : config_(config) {
  const int folded = config.image_channels * config.downsample * config.downsample;
  enc_in_ = register_module("enc_in", conv3x3(folded, config.width));
  enc_blocks_ = register_module("enc_blocks", torch::nn::ModuleList());
  dec_blocks_ = register_module("dec_blocks", torch::nn::ModuleList());
  for (int i = 0; i < config.blocks; ++i) {
    enc_blocks_->push_back(ResBlock(config.width, config.width));
    dec_blocks_->push_back(ResBlock(config.width, config.width));
  }
  enc_norm_ = register_module("enc_norm", group_norm(config.width));
  enc_out_ = register_module("enc_out", conv3x3(config.width, 2 * config.latent_channels));
  dec_in_ = register_module("dec_in", conv3x3(config.latent_channels, config.width));
  dec_norm_ = register_module("dec_norm", group_norm(config.width));
  dec_out_ = register_module("dec_out", conv3x3(config.width, folded));
}

Posterior VaeImpl::encode(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != config_.image_channels || images.size(2) % config_.downsample != 0 ||
      images.size(3) % config_.downsample != 0) {
    throw Error(ErrorKind::shape_mismatch, "vae_encode: expected [B, 3, H, W] with H, W divisible by " +
                                               std::to_string(config_.downsample));
  }
  auto h = enc_in_->forward(F::pixel_unshuffle(images * 2.0 - 1.0, F::PixelUnshuffleFuncOptions(config_.downsample)));
  for (auto& block : *enc_blocks_) h = block->as<ResBlock>()->forward(h);
  auto moments = enc_out_->forward(F::silu(enc_norm_->forward(h)));
  auto parts = moments.chunk(2, 1);
  return {parts[0], parts[1].clamp(-30.0, 20.0)};
}

torch::Tensor VaeImpl::decode(const torch::Tensor& latents) {
  if (latents.dim() != 4 || latents.size(1) != config_.latent_channels) {
    throw Error(ErrorKind::shape_mismatch, "vae_decode: expected [B, latent_channels, h, w]");
  }
  auto h = dec_in_->forward(latents);
  for (auto& block : *dec_blocks_) h = block->as<ResBlock>()->forward(h);
  h = dec_out_->forward(F::silu(dec_norm_->forward(h)));
  return (F::pixel_shuffle(h, F::PixelShuffleFuncOptions(config_.downsample)) + 1.0) * 0.5;
}

VaeLoss vae_loss(Vae& vae, const torch::Tensor& images, double kl_weight, torch::Generator& gen) {
  auto post = vae->encode(images);
  auto eps = torch::randn(post.mean.sizes(), gen, torch::kFloat32);
  auto z = post.mean + torch::exp(0.5 * post.logvar) * eps;
  auto recon = vae->decode(z);
  VaeLoss loss;
  loss.reconstruction = F::mse_loss(recon, images);
  loss.kl = 0.5 * torch::mean(post.mean.pow(2) + post.logvar.exp() - 1.0 - post.logvar);
  loss.total = loss.reconstruction + kl_weight * loss.kl;
  return loss;
}

}  // namespace sense::diffcore
