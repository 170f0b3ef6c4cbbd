#include "sense/diffcore/diffusion.hpp"

#include <cmath>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"

namespace sense::diffcore {

torch::Tensor ldm_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const ConditioningBundle& cond, const torch::Tensor& t, const torch::Tensor& eps) {
  if (!z0.defined() || z0.size(0) == 0) throw Error(ErrorKind::invalid_argument, "ldm_loss: empty batch");
  auto zt = add_noise(schedule, z0, t, eps);
  auto pred = model(zt, t, cond, nullptr);
  if (!pred.sizes().equals(eps.sizes())) {
    throw Error(ErrorKind::shape_mismatch, "ldm_loss: prediction shape differs from noise shape");
  }
  return (pred - eps).pow(2).mean();
}

torch::Tensor ldm_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const ConditioningBundle& cond, torch::Generator& gen) {
  if (!z0.defined() || z0.size(0) == 0) throw Error(ErrorKind::invalid_argument, "ldm_loss: empty batch");
  auto t = torch::randint(1, schedule.T + 1, {z0.size(0)}, gen, torch::kInt64);
  auto eps = torch::randn(z0.sizes(), gen, z0.options());
  return ldm_loss(schedule, model, z0, cond, t, eps);
}

double fixed_draw_loss(const NoiseSchedule& schedule, const EpsModel& model, const torch::Tensor& z0,
                       const std::function<ConditioningBundle(long begin, long end)>& cond_for, std::uint64_t seed,
                       long chunk) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  auto t = torch::randint(1, schedule.T + 1, {z0.size(0)}, gen, torch::kInt64);
  auto eps = torch::randn(z0.sizes(), gen, z0.options());
  double total = 0.0;
  for (long b = 0; b < z0.size(0); b += chunk) {
    long e = std::min(z0.size(0), b + chunk);
    auto loss = ldm_loss(schedule, model, z0.slice(0, b, e), cond_for(b, e), t.slice(0, b, e), eps.slice(0, b, e));
    total += loss.item<double>() * static_cast<double>(e - b);
  }
  return total / static_cast<double>(z0.size(0));
}

SampleResult sample_latents(const NoiseSchedule& schedule, const EpsModel& model, const ConditioningBundle& cond,
                            const std::vector<std::uint64_t>& seeds, torch::IntArrayRef latent_chw, int capture_t) {
  if (seeds.empty()) throw Error(ErrorKind::invalid_argument, "sample: no seeds");
  if (capture_t < 0 || capture_t > schedule.T) {
    throw Error(ErrorKind::invalid_argument, "sample: capture timestep outside [0, T]");
  }
  torch::NoGradGuard no_grad;
  std::vector<torch::Generator> gens;
  for (auto s : seeds) gens.push_back(make_generator(s));
  auto draw = [&] {
    std::vector<torch::Tensor> parts;
    for (auto& g : gens) parts.push_back(torch::randn(latent_chw, g, torch::kFloat32));
    return torch::stack(parts);
  };
  const auto B = static_cast<long>(seeds.size());
  SampleResult result;
  result.capture_t = capture_t;
  auto z = draw();
  for (int t = schedule.T; t >= 1; --t) {
    auto tt = torch::full({B}, t, torch::kInt64);
    std::vector<torch::Tensor> feats;
    auto eps = model(z, tt, cond, t == capture_t ? &feats : nullptr);
    if (t == capture_t) result.features = feats;
    const double a = schedule.alphas[static_cast<std::size_t>(t - 1)];
    const double bar = schedule.alpha_bar(t);
    auto mean = (z - (schedule.beta(t) / std::sqrt(1.0 - bar)) * eps) / std::sqrt(a);
    if (t > 1) {
      z = mean + std::sqrt(schedule.posterior_variance(t)) * draw();
    } else {
      z = mean;
    }
  }
  result.latents = z;
  return result;
}

}  // namespace sense::diffcore
