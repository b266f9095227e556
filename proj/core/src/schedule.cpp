#include "abd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {

NoiseSchedule NoiseSchedule::cosine(int steps, double s) {
  if (steps < 1) throw ConfigError(fmt::format("schedule: T must be >= 1, got {}", steps));
  if (!(s > 0.0)) throw ConfigError(fmt::format("schedule: s must be > 0, got {}", s));
  const double T = steps;
  auto f = [&](double t) {
    const double c = std::cos(((t / T + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(steps + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double ratio = f(t) / f(t - 1);
    betas[t] = std::clamp(1.0 - ratio, 1e-5, 0.999);
  }
  return from_betas(std::move(betas), s);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, double s) {
  if (betas.size() < 2) throw ConfigError("schedule: need at least one step");
  NoiseSchedule out;
  out.s_ = s;
  out.beta_ = std::move(betas);
  out.beta_[0] = 0.0;
  out.alpha_bar_.assign(out.beta_.size(), 1.0);
  for (std::size_t t = 1; t < out.beta_.size(); ++t) {
    const double b = out.beta_[t];
    if (!(b > 0.0 && b < 1.0)) throw ConfigError(fmt::format("schedule: beta[{}]={} outside (0,1)", t, b));
    out.alpha_bar_[t] = out.alpha_bar_[t - 1] * (1.0 - b);
  }
  return out;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw DomainError(fmt::format("schedule: step {} outside [1,{}]", t, steps()));
  return beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw DomainError(fmt::format("schedule: step {} outside [0,{}]", t, steps()));
  return alpha_bar_[t];
}

}  // namespace abd
