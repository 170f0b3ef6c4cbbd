#pragma once

#include <torch/torch.h>

#include <vector>

namespace sense::diffcore {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // index t-1 for t in [1, T]
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // cumulative products

  // Linear betas. The endpoints are given for `reference_T` steps and are
  // rescaled by reference_T / T so shorter chains reach the same terminal
  // noise level.
  static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 2e-2, int reference_T = 1000);

  // ᾱ_t with the t = 0 extension ᾱ_0 = 1.
  double alpha_bar(int t) const;
  double beta(int t) const;
  // Variance of q(z_{t-1} | z_t, z_0).
  double posterior_variance(int t) const;
  void validate() const;
};

// z_t = sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps, per batch element timestep.
torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& z0, const torch::Tensor& t,
                        const torch::Tensor& eps);
torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& z0, int t, const torch::Tensor& eps);

}  // namespace sense::diffcore
