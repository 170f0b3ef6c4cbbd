#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

#include "sense/diffcore/schedule.hpp"
#include "sense/diffcore/text.hpp"

namespace sense::diffcore {

struct ConditioningBundle {
  TextEmbedding text;
  torch::Tensor constraints;  // [B, 3, H, W] constraint masks; undefined when unused
};

// Noise predictor eps_theta(z_t, t, c). `features` (optional) receives the
// decoder block outputs of the pass.
using EpsModel = std::function<torch::Tensor(const torch::Tensor& zt, const torch::Tensor& t,
                                             const ConditioningBundle& cond, std::vector<torch::Tensor>* features)>;

// Mean squared error between eps and eps_theta(z_t, t, c) for the given
// timesteps and noise.
torch::Tensor ldm_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const ConditioningBundle& cond, const torch::Tensor& t, const torch::Tensor& eps);
// As above with t ~ U{1..T} and eps ~ N(0, I) drawn from `gen`.
torch::Tensor ldm_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const ConditioningBundle& cond, torch::Generator& gen);

// Loss with timesteps and noise drawn from a fresh generator seeded by
// `seed`, evaluated without gradients in chunks of `chunk`.
double fixed_draw_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const std::function<ConditioningBundle(long begin, long end)>& cond_for, std::uint64_t seed,
                       long chunk = 64);

struct SampleResult {
  torch::Tensor latents;               // z_0 estimate, [B, c, h, w]
  std::vector<torch::Tensor> features;  // decoder features captured at capture_t
  int capture_t = 0;
};

// DDPM ancestral sampling from z_T ~ N(0, I). Sample i draws all of its
// noise from a generator seeded with seeds[i], so each result depends
// only on its own seed and conditioning. With capture_t in [1, T], the
// decoder features of the pass at that timestep are returned.
SampleResult sample_latents(const NoiseSchedule& schedule, const EpsModel& model, const ConditioningBundle& cond,
                            const std::vector<std::uint64_t>& seeds, torch::IntArrayRef latent_chw,
                            int capture_t = 0);

}  // namespace sense::diffcore
