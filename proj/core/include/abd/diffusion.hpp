#pragma once

#include <array>
#include <cstdint>

#include "abd/autodiff.hpp"
#include "abd/denoiser.hpp"
#include "abd/model.hpp"
#include "abd/params.hpp"
#include "abd/rng.hpp"
#include "abd/schedule.hpp"

namespace abd {

using TypeDist = std::array<double, kNumAminoAcids>;

/// A trained policy: denoising network plus the schedule it was trained on.
struct DiffusionModel {
  DenoiserParams params;
  NoiseSchedule schedule = NoiseSchedule::cosine();
};

/// Denoiser features at step t with the heads scaled to the noise level.
FeatureSet diffusion_features(const DiffusionModel& model, const ComplexInstance& complex, const CdrState& cdr,
                              int t);

struct NoisyCdr {
  CdrState cdr;
  int t = 0;
};

/// q(s^t | s^0) = alpha_bar^t onehot(s0) + (1 - alpha_bar^t)/20.
TypeDist forward_type_dist(int s0, int t, const NoiseSchedule& sched);

/// q(s^t | s^{t-1}) = (1 - beta^t) onehot(s_prev) + beta^t/20.
TypeDist step_type_dist(int s_prev, int t, const NoiseSchedule& sched);

/// Sample from N(sqrt(alpha_bar^t) x0, (1 - alpha_bar^t) I).
Vec3 forward_pos(const Vec3& x0, int t, const NoiseSchedule& sched, Rng& rng);

/// Sample from IG(ScaleRot(sqrt(alpha_bar^t), O0), 1 - alpha_bar^t).
Rotation forward_rot(const Rotation& o0, int t, const NoiseSchedule& sched, Rng& rng);

/// Multinomial-diffusion posterior q(s^{t-1} | s^t, s^0).
TypeDist type_posterior(int s_t, int s0, int t, const NoiseSchedule& sched);

int sample_categorical(const TypeDist& p, Rng& rng);
TypeDist softmax(const TypeDist& logits, double temperature = 1.0);

/// Coefficients of the Gaussian posterior mean
///   mu = c0 * x0_hat + ct * x^t
/// used by the positional reverse kernel.
struct PosteriorCoef {
  double c0 = 1.0;
  double ct = 0.0;
};
PosteriorCoef posterior_coef(int t, const NoiseSchedule& sched);

/// Noises a clean CDR to step t. Positions are noised in the complex's
/// canonical frame, in units of the denoiser's length scale; orientations
/// are noised in the same frame.
NoisyCdr noise_cdr(const ComplexInstance& complex, const CdrState& cdr0, int t, const NoiseSchedule& sched,
                   double length_scale, Rng& rng);

/// Draws (state at t-1, state at t) jointly from the forward chain.
struct NoisePair {
  NoisyCdr prev;
  NoisyCdr cur;
};
NoisePair noise_pair(const ComplexInstance& complex, const CdrState& cdr0, int t, const NoiseSchedule& sched,
                     double length_scale, Rng& rng);

struct LossVars {
  ad::Var type;
  ad::Var pos;
  ad::Var rot;
};

/// L_s (mean KL of the type posterior against the predicted categorical),
/// L_x (mean squared position error in length-scale units) and L_O (mean
/// squared Frobenius deviation of O0^T rot_pred from I) for a given noisy
/// state.
LossVars losses_for_state(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                          const CdrState& cdr0, const NoisyCdr& noisy);

/// Noises cdr0 to step t with `rng`, then evaluates losses_for_state.
LossVars diffusion_losses_on_tape(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                                  const CdrState& cdr0, int t, Rng& rng);

struct DiffusionLosses {
  double type = 0.0;
  double pos = 0.0;
  double rot = 0.0;
  double total() const { return type + pos + rot; }
};

DiffusionLosses diffusion_losses(const DiffusionModel& model, const ComplexInstance& complex, const CdrState& cdr0,
                                 int t, Rng& rng);

/// One reverse step t -> t-1 at the given type temperature. At t = 1 the
/// step is deterministic: argmax types, mean positions and orientations.
NoisyCdr reverse_step(const DiffusionModel& model, const ComplexInstance& complex, const NoisyCdr& noisy,
                      double temperature, Rng& rng);

/// Initial state at t = T: uniform types, Gaussian positions around the
/// anchor midpoint, tangent-Gaussian orientations (all in the complex frame).
NoisyCdr initial_state(const DiffusionModel& model, const ComplexInstance& complex, Rng& rng);

/// Full reverse chain from t = T; deterministic given `seed`.
Design sample_cdr(const DiffusionModel& model, const ComplexInstance& complex, double temperature,
                  std::uint64_t seed);

/// log p(state_prev | state_t) summed over CDR residues (types at
/// temperature 1, probabilities floored at 1e-12).
ad::Var step_log_prob_on_tape(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                              const NoisyCdr& prev, const NoisyCdr& cur);

double step_log_prob(const DiffusionModel& model, const ComplexInstance& complex, const NoisyCdr& prev,
                     const NoisyCdr& cur);

/// Mean of the reverse positional kernel for every residue, in global
/// coordinates (posterior mean given the predicted clean positions).
std::vector<Vec3> reverse_position_mean(const DiffusionModel& model, const ComplexInstance& complex,
                                        const NoisyCdr& noisy, const DenoiseOutput& out);

/// One clean training example.
struct TrainExample {
  ComplexInstance complex;
  CdrState cdr;
};

/// Minibatch Adam on E_t[L_s + L_x + L_O] with t uniform in [1, T]. Encoder
/// parameters stay fixed when `freeze_encoder` is set. Returns the loss of
/// every step.
std::vector<double> train_diffusion(DiffusionModel& model, const std::vector<TrainExample>& data, int steps,
                                    int batch, Rng& rng, const AdamConfig& opt = {}, bool freeze_encoder = true);

}  // namespace abd
