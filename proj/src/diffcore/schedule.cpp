#include "sense/diffcore/schedule.hpp"

#include <cmath>

#include "sense/error.hpp"

namespace sense::diffcore {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end, int reference_T) {
  if (T < 1) throw Error(ErrorKind::invalid_argument, "schedule: T must be positive");
  const double scale = static_cast<double>(reference_T) / static_cast<double>(T);
  NoiseSchedule s;
  s.T = T;
  double bar = 1.0;
  for (int i = 0; i < T; ++i) {
    double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    double b = scale * (beta_start + (beta_end - beta_start) * frac);
    s.betas.push_back(b);
    s.alphas.push_back(1.0 - b);
    bar *= 1.0 - b;
    s.alpha_bars.push_back(bar);
  }
  s.validate();
  return s;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T) throw Error(ErrorKind::invalid_argument, "timestep " + std::to_string(t) + " outside [0, T]");
  return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T) throw Error(ErrorKind::invalid_argument, "timestep " + std::to_string(t) + " outside [1, T]");
  return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::posterior_variance(int t) const {
  return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

void NoiseSchedule::validate() const {
  if (T < 1 || betas.size() != static_cast<std::size_t>(T) || alpha_bars.size() != betas.size()) {
    throw Error(ErrorKind::invalid_argument, "schedule: inconsistent lengths");
  }
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
      throw Error(ErrorKind::invalid_argument, "schedule: beta_" + std::to_string(i + 1) + " outside (0, 1)");
    }
    if (i > 0 && !(alpha_bars[i] < alpha_bars[i - 1])) {
      throw Error(ErrorKind::invalid_argument, "schedule: cumulative alpha not strictly decreasing");
    }
  }
}

torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& z0, const torch::Tensor& t,
                        const torch::Tensor& eps) {
  if (!z0.sizes().equals(eps.sizes())) throw Error(ErrorKind::shape_mismatch, "add_noise: eps shape differs from z0");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) {
    throw Error(ErrorKind::shape_mismatch, "add_noise: need one timestep per batch element");
  }
  auto tc = t.to(torch::kInt64).contiguous();
  std::vector<double> a(static_cast<std::size_t>(tc.size(0))), s(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto ti = tc[static_cast<long>(i)].item<std::int64_t>();
    if (ti < 1 || ti > schedule.T) {
      throw Error(ErrorKind::invalid_argument, "add_noise: timestep " + std::to_string(ti) + " outside [1, T]");
    }
    double bar = schedule.alpha_bar(static_cast<int>(ti));
    a[i] = std::sqrt(bar);
    s[i] = std::sqrt(1.0 - bar);
  }
  std::vector<long> view(static_cast<std::size_t>(z0.dim()), 1);
  view[0] = z0.size(0);
  auto at = torch::tensor(a, torch::kFloat64).to(z0.scalar_type()).view(view);
  auto st = torch::tensor(s, torch::kFloat64).to(z0.scalar_type()).view(view);
  return at * z0 + st * eps;
}

torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& z0, int t, const torch::Tensor& eps) {
  if (t < 1 || t > schedule.T) {
    throw Error(ErrorKind::invalid_argument, "add_noise: timestep " + std::to_string(t) + " outside [1, T]");
  }
  return add_noise(schedule, z0, torch::full({z0.size(0)}, t, torch::kInt64), eps);
}

}  // namespace sense::diffcore
