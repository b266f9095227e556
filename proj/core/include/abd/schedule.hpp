#pragma once

#include <vector>

namespace abd {

/// Per-step noise levels beta[t] (t = 1..T) and cumulative
/// alpha_bar[t] = prod_{tau <= t} (1 - beta[tau]) with alpha_bar[0] = 1.
class NoiseSchedule {
 public:
  /// Cosine family with offset s:
  ///   f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2),
  ///   beta[t] = clip(1 - f(t)/f(t-1), 1e-5, 0.999).
  /// alpha_bar is then re-accumulated from the clipped betas so the two
  /// arrays are exactly consistent.
  static NoiseSchedule cosine(int steps = 100, double s = 0.01);

  /// Rebuilds a schedule from stored betas (checkpoint resume).
  static NoiseSchedule from_betas(std::vector<double> betas, double s);

  int steps() const { return static_cast<int>(beta_.size()) - 1; }
  double offset() const { return s_; }

  /// beta at step t in [1, T].
  double beta(int t) const;
  /// 1 - beta(t).
  double alpha(int t) const { return 1.0 - beta(t); }
  /// alpha_bar at step t in [0, T].
  double alpha_bar(int t) const;

  /// beta[1..T] as stored (index 0 unused, kept as 0).
  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  NoiseSchedule() = default;
  double s_ = 0.0;
  std::vector<double> beta_;       // size T+1, beta_[0] = 0
  std::vector<double> alpha_bar_;  // size T+1, alpha_bar_[0] = 1
};

}  // namespace abd
