#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "sense/diffcore/diffusion.hpp"
#include "sense/diffcore/text.hpp"
#include "sense/diffcore/unet.hpp"
#include "sense/diffcore/vae.hpp"
#include "sense/tilestore/tile.hpp"

namespace sense::diffcore {

struct BackboneConfig {
  int image_size = 64;
  int T = 200;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int reference_T = 1000;
  int max_tokens = 64;
  std::vector<std::string> cities{"New York City", "Boston", "Lyon", "Busan"};
  VaeConfig vae;
  TextEncoderConfig text;
  UNetConfig unet;
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

// VAE, text encoder, denoising U-Net, vocabulary and noise schedule.
class Backbone {
 public:
  Backbone() = default;  // uninitialized; every model call throws
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  bool initialized() const { return static_cast<bool>(unet); }
  void require_initialized() const;

  ConditioningBundle condition(const std::vector<std::string>& prompts);
  // Scaled posterior means, [B, c, H/f, W/f].
  torch::Tensor encode_images(const torch::Tensor& images);
  // Decoded images clamped to [0, 1].
  torch::Tensor decode_latents(const torch::Tensor& latents);
  // One noise prediction. Deterministic in eval mode.
  torch::Tensor denoise(const torch::Tensor& zt, const torch::Tensor& t, const ConditioningBundle& cond,
                        const ControlResiduals* control = nullptr, std::vector<torch::Tensor>* features = nullptr);
  EpsModel eps_model();

  std::vector<torch::Tensor> parameters();
  void set_trainable(bool trainable);
  void train(bool on);

  // SHA-256 over all weights, buffers and the latent scale.
  std::string digest() const;
  void save(const std::filesystem::path& path) const;
  static Backbone load(const std::filesystem::path& path);

  BackboneConfig config;
  NoiseSchedule schedule;
  Vocabulary vocab;
  double latent_scale = 1.0;
  Vae vae{nullptr};
  TextEncoder text{nullptr};
  UNet unet{nullptr};
};

// Stacked training tensors for a set of tiles.
struct ImageCorpus {
  torch::Tensor images;       // [N, 3, H, W] in [0, 1]
  torch::Tensor constraints;  // [N, 3, H, W] in {0, 1}
  std::vector<std::string> prompts;
  std::vector<std::string> tile_ids;

  static ImageCorpus from_tiles(const std::vector<tiles::Tile>& tiles);
  std::size_t size() const { return tile_ids.size(); }
  ImageCorpus subset(const std::vector<std::size_t>& rows) const;
};

struct TrainOptions {
  int steps = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int log_every = 100;
  std::function<void(int step, double loss)> on_log;
};

struct TrainLog {
  std::vector<double> losses;  // per optimisation step
  double eval_before = 0.0;    // fixed-draw evaluation loss
  double eval_after = 0.0;
};

// Fixed-draw loss: timesteps and noise come from `seed`, so the same
// latents give the same value for the same weights.
double evaluate_ldm_loss(Backbone& backbone, const torch::Tensor& latents, const std::vector<std::string>& prompts,
                         std::uint64_t seed);

TrainLog train_vae(Backbone& backbone, const ImageCorpus& corpus, const TrainOptions& options,
                   double kl_weight = 1e-6);
// Mean absolute reconstruction error per image channel.
std::vector<double> vae_reconstruction_error(Backbone& backbone, const torch::Tensor& images);
TrainLog train_ldm(Backbone& backbone, const ImageCorpus& corpus, const TrainOptions& options);

// Forward helper that evaluates in chunks without gradients.
torch::Tensor encode_in_chunks(Backbone& backbone, const torch::Tensor& images, long chunk = 64);

}  // namespace sense::diffcore

namespace sense::diffcore {
// SHA-256 over a module's parameters and buffers.
std::string module_digest(const torch::nn::Module& module);
}  // namespace sense::diffcore
