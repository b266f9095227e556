#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abd/diffusion.hpp"
#include "abd/energy.hpp"
#include "abd/params.hpp"

namespace abd {

/// Bradley-Terry preference probability sigma(r1 - r2).
double bt_prob(double r1, double r2);

/// A scored design. `offset` is an additive per-input constant on the
/// collective reward; it cancels exactly inside every pairwise difference.
struct ScoredSample {
  Design design;
  RewardVector r;
  double offset = 0.0;
};

double collective_reward(const ScoredSample& s, const Weights& w);

struct PreferenceRecord {
  std::string complex_id;
  Design y_w;
  Design y_l;
  RewardVector r_w;
  RewardVector r_l;
  double rhat_w = 0.0;
  double rhat_l = 0.0;
  double margin = 0.0;
};

struct PreferenceBatch {
  std::vector<PreferenceRecord> records;
  int ties = 0;  // pairs discarded because |rhat_i - rhat_j| <= 1e-9
};

/// Randomly pairs samples of the same complex (disjoint pairs, odd one out
/// dropped), labels each pair by collective reward and drops ties.
PreferenceBatch build_preferences(const std::vector<ScoredSample>& samples, const Weights& w, Rng& rng);

/// beta * T * [log p_theta(w) - log p_ref(w) - log p_theta(l) + log p_ref(l)]
/// at step t, winner and loser noised along the same random path.
double implicit_margin(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                       const ComplexInstance& complex, int t, Rng& rng, double beta);

/// -log sigma(implicit - margin).
double preference_loss_from_margin(double implicit, double margin);

ad::Var preference_loss_on_tape(ad::Tape& tape, const DiffusionModel& theta, const DiffusionModel& ref,
                                const PreferenceRecord& rec, const ComplexInstance& complex, int t,
                                std::uint64_t noise_seed, double beta, double margin);

double poea_loss(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                 const ComplexInstance& complex, int t, Rng& rng, double beta);
double dpo_loss(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                const ComplexInstance& complex, int t, Rng& rng, double beta);

/// beta * [log p_theta - log p_ref] of one design's step t-1 given t.
double implicit_reward(const DiffusionModel& theta, const DiffusionModel& ref, const Design& design,
                       const ComplexInstance& complex, int t, Rng& rng, double beta);

struct AlignConfig {
  double beta = 100.0;
  Weights w;
  int iterations = 3;
  int prompts_per_iter = 8;
  int samples_per_prompt = 16;
  int steps_per_iter = 500;
  int batch_pairs = 8;
  double temp0 = 1.5;
  double temp_decay = 0.9;
  AdamConfig opt{1e-4, 0.9, 0.999, 1e-8, 100.0};
  int val_samples = 64;
  double val_temperature = 1.0;
  bool use_margin = true;  // false gives the margin-free DPO baseline

  void validate() const;  // throws ConfigError
};

/// 1 + (temp0 - 1) * decay^k.
double temperature_at(int k, const AlignConfig& cfg);

struct IterationReport {
  int iter = 0;
  double temperature = 0.0;
  int n_prefs = 0;
  int n_prefs_total = 0;
  double mean_rhat_train = 0.0;
  double mean_rhat_val = 0.0;
  /// Mean implicit reward of winners minus that of losers on this
  /// iteration's records, after the update.
  double mean_implicit_reward = 0.0;
  std::vector<double> losses;
};

struct AlignResult {
  std::vector<DenoiserParams> policies;  // policies[0] is the reference
  int best = 0;
  std::vector<IterationReport> iterations;  // one per policy
  std::vector<std::string> warnings;

  const DenoiserParams& best_params() const { return policies.at(best); }
};

/// Mean collective reward of `n` samples per complex at `temperature`.
/// Sample seeds depend only on (seed, complex id, sample index).
double mean_collective_reward(const DiffusionModel& model, const std::vector<ComplexInstance>& complexes, int n,
                              double temperature, const Weights& w, std::uint64_t seed,
                              const EnergyParams& ep = {});

/// Iterative online alignment against a fixed reference policy. The
/// returned best policy maximizes validation mean collective reward.
AlignResult iterate_align(const DiffusionModel& ref, const std::vector<ComplexInstance>& train,
                          const std::vector<ComplexInstance>& val, const AlignConfig& cfg, std::uint64_t seed,
                          const EnergyParams& ep = {});

}  // namespace abd
