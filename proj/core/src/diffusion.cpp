#include "abd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {
namespace {

void check_step(int t, const NoiseSchedule& sched, const char* where) {
  if (t < 1 || t > sched.steps()) throw DomainError(fmt::format("{}: step {} outside [1,{}]", where, t, sched.steps()));
}

constexpr double kProbFloor = 1e-12;

double gaussian_log_norm(double var) { return -1.5 * std::log(2.0 * std::numbers::pi * var); }

Vec3 normal3(Rng& rng) {
  Vec3 v;
  for (int i = 0; i < 3; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

FeatureSet diffusion_features(const DiffusionModel& model, const ComplexInstance& complex, const CdrState& cdr,
                              int t) {
  check_step(t, model.schedule, "diffusion_features");
  FeatureSet f = featurize(model.params.config, complex, cdr, t);
  f.head_scale = std::sqrt(1.0 - model.schedule.alpha_bar(t));
  return f;
}

TypeDist forward_type_dist(int s0, int t, const NoiseSchedule& sched) {
  check_step(t, sched, "forward_type_dist");
  const double ab = sched.alpha_bar(t);
  TypeDist p;
  p.fill((1.0 - ab) / kNumAminoAcids);
  p.at(s0) += ab;
  return p;
}

TypeDist step_type_dist(int s_prev, int t, const NoiseSchedule& sched) {
  check_step(t, sched, "step_type_dist");
  const double b = sched.beta(t);
  TypeDist p;
  p.fill(b / kNumAminoAcids);
  p.at(s_prev) += 1.0 - b;
  return p;
}

Vec3 forward_pos(const Vec3& x0, int t, const NoiseSchedule& sched, Rng& rng) {
  check_step(t, sched, "forward_pos");
  const double ab = sched.alpha_bar(t);
  const Vec3 eps = normal3(rng);
  if (ab == 1.0) return x0;
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Rotation forward_rot(const Rotation& o0, int t, const NoiseSchedule& sched, Rng& rng) {
  check_step(t, sched, "forward_rot");
  const double ab = sched.alpha_bar(t);
  return sample_igso3_approx(scale_rot(std::sqrt(ab), o0), 1.0 - ab, rng);
}

TypeDist type_posterior(int s_t, int s0, int t, const NoiseSchedule& sched) {
  check_step(t, sched, "type_posterior");
  const double a = sched.alpha(t);
  const double abp = sched.alpha_bar(t - 1);
  TypeDist p;
  double z = 0.0;
  for (int k = 0; k < kNumAminoAcids; ++k) {
    const double lik = a * (k == s_t) + (1.0 - a) / kNumAminoAcids;
    const double prior = abp * (k == s0) + (1.0 - abp) / kNumAminoAcids;
    p[k] = lik * prior;
    z += p[k];
  }
  for (double& x : p) x /= z;
  return p;
}

int sample_categorical(const TypeDist& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int k = 0; k < kNumAminoAcids; ++k) {
    acc += p[k];
    if (u < acc) return k;
  }
  // Rounding left u above the accumulated mass: last nonzero entry.
  for (int k = kNumAminoAcids - 1; k >= 0; --k)
    if (p[k] > 0.0) return k;
  return kNumAminoAcids - 1;
}

TypeDist softmax(const TypeDist& logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  TypeDist p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (int k = 0; k < kNumAminoAcids; ++k) {
    p[k] = std::exp((logits[k] - mx) / temperature);
    z += p[k];
  }
  for (double& x : p) x /= z;
  return p;
}

PosteriorCoef posterior_coef(int t, const NoiseSchedule& sched) {
  check_step(t, sched, "posterior_coef");
  const double b = sched.beta(t);
  const double ab = sched.alpha_bar(t);
  const double abp = sched.alpha_bar(t - 1);
  return {std::sqrt(abp) * b / (1.0 - ab), std::sqrt(1.0 - b) * (1.0 - abp) / (1.0 - ab)};
}

NoisyCdr noise_cdr(const ComplexInstance& complex, const CdrState& cdr0, int t, const NoiseSchedule& sched,
                   double length_scale, Rng& rng) {
  const ComplexFrame frame = complex_frame(complex);
  NoisyCdr out{cdr0, t};
  if (t == 0) return out;
  for (auto& r : out.cdr.residues) {
    r.aa = sample_categorical(forward_type_dist(r.aa, t, sched), rng);
    const Vec3 z = forward_pos(frame.to_local(r.x) / length_scale, t, sched, rng);
    r.x = frame.to_global(z * length_scale);
    r.orient = frame.to_global(forward_rot(frame.to_local(r.orient), t, sched, rng));
  }
  return out;
}

NoisePair noise_pair(const ComplexInstance& complex, const CdrState& cdr0, int t, const NoiseSchedule& sched,
                     double length_scale, Rng& rng) {
  check_step(t, sched, "noise_pair");
  const ComplexFrame frame = complex_frame(complex);
  NoisePair pair{noise_cdr(complex, cdr0, t - 1, sched, length_scale, rng), {}};
  pair.cur = {pair.prev.cdr, t};
  const double a = sched.alpha(t);
  const double b = sched.beta(t);
  for (auto& r : pair.cur.cdr.residues) {
    r.aa = sample_categorical(step_type_dist(r.aa, t, sched), rng);
    const Vec3 z = std::sqrt(a) * frame.to_local(r.x) / length_scale + std::sqrt(b) * normal3(rng);
    r.x = frame.to_global(z * length_scale);
    r.orient = frame.to_global(sample_igso3_approx(scale_rot(std::sqrt(a), frame.to_local(r.orient)), b, rng));
  }
  return pair;
}

namespace {

std::vector<double> local_orients(const ComplexFrame& frame, const CdrState& cdr) {
  std::vector<double> mats;
  mats.reserve(cdr.residues.size() * 9);
  for (const auto& r : cdr.residues) {
    const auto a = frame.to_local(r.orient).row_major();
    mats.insert(mats.end(), a.begin(), a.end());
  }
  return mats;
}

}  // namespace

LossVars losses_for_state(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                          const CdrState& cdr0, const NoisyCdr& noisy) {
  const auto& sched = model.schedule;
  const int t = noisy.t;
  check_step(t, sched, "diffusion_losses");
  const int m = cdr0.size();
  if (noisy.cdr.size() != m) throw DomainError("diffusion_losses: state length mismatch");
  const double scale = model.params.config.length_scale;
  const FeatureSet feats = diffusion_features(model, complex, noisy.cdr, t);
  const DenoiseVars v = denoise_on_tape(tape, model.params, feats);

  // Types: KL(q || p) = sum q log q - sum q log p.
  std::vector<double> q(static_cast<std::size_t>(m) * kNumAminoAcids);
  double qlogq = 0.0;
  for (int i = 0; i < m; ++i) {
    const TypeDist post = type_posterior(noisy.cdr.residues[i].aa, cdr0.residues[i].aa, t, sched);
    for (int k = 0; k < kNumAminoAcids; ++k) {
      q[i * kNumAminoAcids + k] = post[k];
      if (post[k] > 0.0) qlogq += post[k] * std::log(post[k]);
    }
  }
  ad::Var cross = tape.sum(tape.mul(tape.constant(m, kNumAminoAcids, std::move(q)), tape.log_softmax_rows(v.logits)));
  ad::Var l_type = tape.add_scalar(tape.scale(cross, -1.0 / m), qlogq / m);

  // Positions, in the complex frame and length-scale units.
  const ComplexFrame frame = complex_frame(complex);
  std::vector<double> shift(static_cast<std::size_t>(m) * 3);
  for (int i = 0; i < m; ++i) {
    const Vec3 d = (frame.to_local(noisy.cdr.residues[i].x) - frame.to_local(cdr0.residues[i].x)) / scale;
    for (int k = 0; k < 3; ++k) shift[3 * i + k] = d[k];
  }
  ad::Var diff = tape.add(tape.row_matvec3(local_orients(frame, noisy.cdr), v.offset),
                          tape.constant(m, 3, std::move(shift)));
  ad::Var l_pos = tape.scale(tape.sum(tape.square(diff)), 1.0 / m);

  // Orientations: || O0^T O_t exp(w) - I ||_F^2.
  std::vector<std::array<double, 9>> rel(m);
  for (int i = 0; i < m; ++i)
    rel[i] = (cdr0.residues[i].orient.transpose() * noisy.cdr.residues[i].orient).row_major();
  ad::Var per_res = tape.map_rows<3, 1>(v.rotvec, [&](int r, const std::array<Dual<3>, 3>& w) {
    const auto e = so3::exp(w);
    Dual<3> s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        Dual<3> mij = rel[r][3 * i] * e[j] + rel[r][3 * i + 1] * e[3 + j] + rel[r][3 * i + 2] * e[6 + j];
        if (i == j) mij = mij - 1.0;
        s += mij * mij;
      }
    return std::array<Dual<3>, 1>{s};
  });
  ad::Var l_rot = tape.scale(tape.sum(per_res), 1.0 / m);
  return {l_type, l_pos, l_rot};
}

LossVars diffusion_losses_on_tape(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                                  const CdrState& cdr0, int t, Rng& rng) {
  const NoisyCdr noisy = noise_cdr(complex, cdr0, t, model.schedule, model.params.config.length_scale, rng);
  return losses_for_state(tape, model, complex, cdr0, noisy);
}

DiffusionLosses diffusion_losses(const DiffusionModel& model, const ComplexInstance& complex, const CdrState& cdr0,
                                 int t, Rng& rng) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const LossVars v = diffusion_losses_on_tape(tape, model, complex, cdr0, t, rng);
  return {tape.item(v.type), tape.item(v.pos), tape.item(v.rot)};
}

std::vector<Vec3> reverse_position_mean(const DiffusionModel& model, const ComplexInstance& complex,
                                        const NoisyCdr& noisy, const DenoiseOutput& out) {
  const ComplexFrame frame = complex_frame(complex);
  const PosteriorCoef c = posterior_coef(noisy.t, model.schedule);
  std::vector<Vec3> mu(noisy.cdr.residues.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const Vec3 zp = frame.to_local(out.x_pred[i]);
    const Vec3 zt = frame.to_local(noisy.cdr.residues[i].x);
    mu[i] = frame.to_global(c.c0 * zp + c.ct * zt);
  }
  return mu;
}

NoisyCdr reverse_step(const DiffusionModel& model, const ComplexInstance& complex, const NoisyCdr& noisy,
                      double temperature, Rng& rng) {
  const int t = noisy.t;
  check_step(t, model.schedule, "reverse_step");
  if (!(temperature > 0.0)) throw DomainError("reverse_step: temperature must be positive");
  const FeatureSet feats = diffusion_features(model, complex, noisy.cdr, t);
  const DenoiseOutput out = denoise(model.params, feats, noisy.cdr);
  const std::vector<Vec3> mu = reverse_position_mean(model, complex, noisy, out);
  const ComplexFrame frame = complex_frame(complex);
  const double b = model.schedule.beta(t);
  const double sd = std::sqrt(b) * model.params.config.length_scale;

  NoisyCdr next{noisy.cdr, t - 1};
  for (std::size_t i = 0; i < next.cdr.residues.size(); ++i) {
    auto& r = next.cdr.residues[i];
    const auto& logits = out.type_logits[i];
    if (t == 1) {
      r.aa = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      r.x = mu[i];
      r.orient = out.rot_pred[i];
    } else {
      r.aa = sample_categorical(softmax(logits, temperature), rng);
      r.x = mu[i] + frame.axes * (sd * normal3(rng));
      r.orient = sample_igso3_approx(out.rot_pred[i], b, rng);
    }
  }
  return next;
}

NoisyCdr initial_state(const DiffusionModel& model, const ComplexInstance& complex, Rng& rng) {
  const int T = model.schedule.steps();
  const ComplexFrame frame = complex_frame(complex);
  const double scale = model.params.config.length_scale;
  const double var = 1.0 - model.schedule.alpha_bar(T);
  NoisyCdr s{CdrState{}, T};
  s.cdr.residues.resize(complex.cdr_span.length);
  for (auto& r : s.cdr.residues) {
    r.aa = static_cast<int>(rng.index(kNumAminoAcids));
    r.x = frame.to_global(normal3(rng) * scale);
    r.orient = frame.to_global(sample_igso3_approx(Rotation(), var, rng));
  }
  return s;
}

Design sample_cdr(const DiffusionModel& model, const ComplexInstance& complex, double temperature,
                  std::uint64_t seed) {
  Rng rng(seed);
  NoisyCdr s = initial_state(model, complex, rng);
  while (s.t > 0) s = reverse_step(model, complex, s, temperature, rng);
  return Design{complex.id, std::move(s.cdr), std::nullopt, seed};
}

ad::Var step_log_prob_on_tape(ad::Tape& tape, const DiffusionModel& model, const ComplexInstance& complex,
                              const NoisyCdr& prev, const NoisyCdr& cur) {
  const int t = cur.t;
  check_step(t, model.schedule, "step_log_prob");
  if (prev.t != t - 1) throw DomainError(fmt::format("step_log_prob: states at {} and {} are not consecutive", prev.t, t));
  const int m = cur.cdr.size();
  if (prev.cdr.size() != m) throw DomainError("step_log_prob: state length mismatch");
  const double b = model.schedule.beta(t);
  const double scale = model.params.config.length_scale;
  const FeatureSet feats = diffusion_features(model, complex, cur.cdr, t);
  const DenoiseVars v = denoise_on_tape(tape, model.params, feats);

  std::vector<int> observed(m);
  for (int i = 0; i < m; ++i) observed[i] = prev.cdr.residues[i].aa;
  ad::Var lp_type =
      tape.sum(tape.clamp_min(tape.pick(tape.log_softmax_rows(v.logits), observed), std::log(kProbFloor)));

  const ComplexFrame frame = complex_frame(complex);
  const PosteriorCoef c = posterior_coef(t, model.schedule);
  std::vector<double> shift(static_cast<std::size_t>(m) * 3);
  for (int i = 0; i < m; ++i) {
    const Vec3 zt = frame.to_local(cur.cdr.residues[i].x) / scale;
    const Vec3 zp = frame.to_local(prev.cdr.residues[i].x) / scale;
    const Vec3 d = (c.c0 + c.ct) * zt - zp;
    for (int k = 0; k < 3; ++k) shift[3 * i + k] = d[k];
  }
  ad::Var diff = tape.add(tape.scale(tape.row_matvec3(local_orients(frame, cur.cdr), v.offset), c.c0),
                          tape.constant(m, 3, std::move(shift)));
  ad::Var lp_pos = tape.add_scalar(tape.scale(tape.sum(tape.square(diff)), -0.5 / b), m * gaussian_log_norm(b));

  std::vector<std::array<double, 9>> rel(m);
  for (int i = 0; i < m; ++i)
    rel[i] = (cur.cdr.residues[i].orient.transpose() * prev.cdr.residues[i].orient).row_major();
  ad::Var sq = tape.map_rows<3, 1>(v.rotvec, [&](int r, const std::array<Dual<3>, 3>& w) {
    const auto et = so3::transpose(so3::exp(w));
    std::array<Dual<3>, 9> relr;
    for (int k = 0; k < 9; ++k) relr[k] = rel[r][k];
    const auto res = so3::log(so3::matmul(et, relr));
    return std::array<Dual<3>, 1>{res[0] * res[0] + res[1] * res[1] + res[2] * res[2]};
  });
  ad::Var lp_rot = tape.add_scalar(tape.scale(tape.sum(sq), -0.5 / b), m * gaussian_log_norm(b));
  return tape.add(tape.add(lp_type, lp_pos), lp_rot);
}

double step_log_prob(const DiffusionModel& model, const ComplexInstance& complex, const NoisyCdr& prev,
                     const NoisyCdr& cur) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  return tape.item(step_log_prob_on_tape(tape, model, complex, prev, cur));
}

std::vector<double> train_diffusion(DiffusionModel& model, const std::vector<TrainExample>& data, int steps,
                                    int batch, Rng& rng, const AdamConfig& opt, bool freeze_encoder) {
  if (steps < 0 || batch < 1) throw ConfigError("train_diffusion: steps must be >= 0 and batch >= 1");
  if (steps > 0 && data.empty()) throw ConfigError("train_diffusion: empty training set");
  Adam adam(model.params.store, opt);
  const int T = model.schedule.steps();
  std::vector<double> losses;
  losses.reserve(steps);
  for (int step = 0; step < steps; ++step) {
    std::vector<std::tuple<std::size_t, int, std::uint64_t>> draws(batch);
    for (auto& [idx, t, seed] : draws) {
      idx = rng.index(data.size());
      t = 1 + static_cast<int>(rng.index(T));
      seed = rng.next_u64();
    }
    auto [loss, grads] = loss_and_grad(model.params, [&](ad::Tape& tape) {
      ad::Var acc = tape.scalar(0.0);
      for (const auto& [idx, t, seed] : draws) {
        Rng noise(seed);
        const LossVars v = diffusion_losses_on_tape(tape, model, data[idx].complex, data[idx].cdr, t, noise);
        acc = tape.add(acc, tape.add(tape.add(v.type, v.pos), v.rot));
      }
      return tape.scale(acc, 1.0 / batch);
    });
    if (freeze_encoder)
      adam.step(model.params.store, std::move(grads), [&](int i) { return !model.params.is_encoder_param(i); });
    else
      adam.step(model.params.store, std::move(grads));
    losses.push_back(loss);
  }
  return losses;
}

}  // namespace abd
