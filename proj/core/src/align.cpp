#include "abd/align.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {
namespace {

constexpr double kTieTol = 1e-9;

void check_models(const DiffusionModel& theta, const DiffusionModel& ref) {
  if (!(theta.params.config == ref.params.config))
    throw ConfigError("policy and reference have different architectures");
  if (theta.schedule.steps() != ref.schedule.steps()) throw ConfigError("policy and reference have different schedules");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double bt_prob(double r1, double r2) {
  const double d = r1 - r2;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  return 1.0 - bt_prob(r2, r1);
}

double collective_reward(const ScoredSample& s, const Weights& w) { return collective_reward(s.r, w) + s.offset; }

PreferenceBatch build_preferences(const std::vector<ScoredSample>& samples, const Weights& w, Rng& rng) {
  w.validate();
  std::vector<std::string> order;
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    auto [it, fresh] = groups.try_emplace(samples[i].design.complex_id);
    if (fresh) order.push_back(it->first);
    it->second.push_back(i);
  }
  PreferenceBatch out;
  for (const auto& id : order) {
    std::vector<int> idx = groups[id];
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      const ScoredSample& a = samples[idx[k]];
      const ScoredSample& b = samples[idx[k + 1]];
      // Rewards are differenced term by term so that offsets cancel exactly.
      const double diff = (w.att * (a.r.r_att - b.r.r_att) + w.rep * (a.r.r_rep - b.r.r_rep)) + (a.offset - b.offset);
      if (std::abs(diff) <= kTieTol) {
        ++out.ties;
        continue;
      }
      const ScoredSample& win = diff > 0.0 ? a : b;
      const ScoredSample& lose = diff > 0.0 ? b : a;
      out.records.push_back({id, win.design, lose.design, win.r, lose.r, collective_reward(win, w),
                             collective_reward(lose, w), reward_margin_from_diff(std::abs(diff))});
    }
  }
  return out;
}

ad::Var preference_loss_on_tape(ad::Tape& tape, const DiffusionModel& theta, const DiffusionModel& ref,
                                const PreferenceRecord& rec, const ComplexInstance& complex, int t,
                                std::uint64_t noise_seed, double beta, double margin) {
  check_models(theta, ref);
  const double scale = theta.params.config.length_scale;
  Rng rw(noise_seed);
  Rng rl(noise_seed);
  const NoisePair pw = noise_pair(complex, rec.y_w.cdr, t, theta.schedule, scale, rw);
  const NoisePair pl = noise_pair(complex, rec.y_l.cdr, t, theta.schedule, scale, rl);
  const double ref_w = step_log_prob(ref, complex, pw.prev, pw.cur);
  const double ref_l = step_log_prob(ref, complex, pl.prev, pl.cur);
  const ad::Var tw = step_log_prob_on_tape(tape, theta, complex, pw.prev, pw.cur);
  const ad::Var tl = step_log_prob_on_tape(tape, theta, complex, pl.prev, pl.cur);
  const double k = beta * theta.schedule.steps();
  const ad::Var z = tape.add_scalar(tape.scale(tape.sub(tw, tl), k), k * (ref_l - ref_w) - margin);
  const ad::Var loss = tape.softplus(tape.scale(z, -1.0));
  if (!std::isfinite(tape.item(loss))) throw NumericError(fmt::format("preference loss is not finite at t={}", t));
  return loss;
}

double implicit_margin(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                       const ComplexInstance& complex, int t, Rng& rng, double beta) {
  check_models(theta, ref);
  const std::uint64_t seed = rng.next_u64();
  const double scale = theta.params.config.length_scale;
  Rng rw(seed);
  Rng rl(seed);
  const NoisePair pw = noise_pair(complex, rec.y_w.cdr, t, theta.schedule, scale, rw);
  const NoisePair pl = noise_pair(complex, rec.y_l.cdr, t, theta.schedule, scale, rl);
  const double k = beta * theta.schedule.steps();
  const double tw = step_log_prob(theta, complex, pw.prev, pw.cur);
  const double tl = step_log_prob(theta, complex, pl.prev, pl.cur);
  const double ref_w = step_log_prob(ref, complex, pw.prev, pw.cur);
  const double ref_l = step_log_prob(ref, complex, pl.prev, pl.cur);
  return k * (tw - tl) + k * (ref_l - ref_w);
}

double preference_loss_from_margin(double implicit, double margin) { return softplus(-(implicit - margin)); }

double poea_loss(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                 const ComplexInstance& complex, int t, Rng& rng, double beta) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  return tape.item(preference_loss_on_tape(tape, theta, ref, rec, complex, t, rng.next_u64(), beta, rec.margin));
}

double dpo_loss(const DiffusionModel& theta, const DiffusionModel& ref, const PreferenceRecord& rec,
                const ComplexInstance& complex, int t, Rng& rng, double beta) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  return tape.item(preference_loss_on_tape(tape, theta, ref, rec, complex, t, rng.next_u64(), beta, 0.0));
}

double implicit_reward(const DiffusionModel& theta, const DiffusionModel& ref, const Design& design,
                       const ComplexInstance& complex, int t, Rng& rng, double beta) {
  check_models(theta, ref);
  Rng noise(rng.next_u64());
  const NoisePair p = noise_pair(complex, design.cdr, t, theta.schedule, theta.params.config.length_scale, noise);
  return beta * (step_log_prob(theta, complex, p.prev, p.cur) - step_log_prob(ref, complex, p.prev, p.cur));
}

void AlignConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("align.beta must be positive");
  w.validate();
  if (iterations < 0) throw ConfigError("align.iterations must be >= 0");
  if (prompts_per_iter < 1) throw ConfigError("align.prompts_per_iter must be >= 1");
  if (samples_per_prompt < 2) throw ConfigError("align.samples_per_prompt must be >= 2");
  if (steps_per_iter < 0) throw ConfigError("align.steps_per_iter must be >= 0");
  if (batch_pairs < 1) throw ConfigError("align.batch_pairs must be >= 1");
  if (!(temp0 >= 1.0)) throw ConfigError("align.temp0 must be >= 1");
  if (!(temp_decay > 0.0 && temp_decay <= 1.0)) throw ConfigError("align.temp_decay must be in (0, 1]");
  if (!(opt.lr > 0.0)) throw ConfigError("align.lr must be positive");
  if (val_samples < 1) throw ConfigError("align.val_samples must be >= 1");
  if (!(val_temperature > 0.0)) throw ConfigError("align.val_temperature must be positive");
}

double temperature_at(int k, const AlignConfig& cfg) {
  if (k < 0) throw DomainError("temperature_at: negative iteration");
  return 1.0 + (cfg.temp0 - 1.0) * std::pow(cfg.temp_decay, k);
}

double mean_collective_reward(const DiffusionModel& model, const std::vector<ComplexInstance>& complexes, int n,
                              double temperature, const Weights& w, std::uint64_t seed, const EnergyParams& ep) {
  if (complexes.empty() || n < 1) throw ConfigError("mean_collective_reward: nothing to sample");
  double total = 0.0;
  for (const auto& c : complexes)
    for (int j = 0; j < n; ++j) {
      const Design d = sample_cdr(model, c, temperature, Rng::derive_seed(seed, fmt::format("{}/{}", c.id, j)));
      total += collective_reward(rewards(cdr_ag_energies(c, d.cdr, ep)), w);
    }
  return total / (static_cast<double>(complexes.size()) * n);
}

AlignResult iterate_align(const DiffusionModel& ref, const std::vector<ComplexInstance>& train,
                          const std::vector<ComplexInstance>& val, const AlignConfig& cfg, std::uint64_t seed,
                          const EnergyParams& ep) {
  cfg.validate();
  if (train.empty()) throw ConfigError("iterate_align: no training complexes");
  if (val.empty()) throw ConfigError("iterate_align: no validation complexes");
  std::map<std::string, const ComplexInstance*> by_id;
  for (const auto& c : train) by_id[c.id] = &c;

  const std::uint64_t val_seed = Rng::derive_seed(seed, "val");
  Rng rng(Rng::derive_seed(seed, "align"));
  AlignResult out;
  out.policies.push_back(ref.params);
  IterationReport r0;
  r0.mean_rhat_val = mean_collective_reward(ref, val, cfg.val_samples, cfg.val_temperature, cfg.w, val_seed, ep);
  out.iterations.push_back(r0);

  DiffusionModel theta = ref;
  Adam adam(theta.params.store, cfg.opt);
  const auto trainable = [&](int i) { return !theta.params.is_encoder_param(i); };
  std::vector<PreferenceRecord> pool;
  const int T = ref.schedule.steps();

  for (int k = 0; k < cfg.iterations; ++k) {
    IterationReport rep;
    rep.iter = k + 1;
    rep.temperature = temperature_at(k, cfg);

    std::vector<ScoredSample> samples;
    double rsum = 0.0;
    for (int p = 0; p < cfg.prompts_per_iter; ++p) {
      const ComplexInstance& c = train[p % train.size()];
      for (int j = 0; j < cfg.samples_per_prompt; ++j) {
        const auto s = Rng::derive_seed(seed, fmt::format("sample/{}/{}/{}", k, p, j));
        Design d = sample_cdr(theta, c, rep.temperature, s);
        d.energies = cdr_ag_energies(c, d.cdr, ep);
        const RewardVector r = rewards(*d.energies);
        rsum += collective_reward(r, cfg.w);
        samples.push_back({std::move(d), r, 0.0});
      }
    }
    rep.mean_rhat_train = rsum / static_cast<double>(samples.size());

    PreferenceBatch batch = build_preferences(samples, cfg.w, rng);
    if (!cfg.use_margin)
      for (auto& rec : batch.records) rec.margin = 0.0;
    rep.n_prefs = static_cast<int>(batch.records.size());
    if (batch.records.empty()) out.warnings.push_back(fmt::format("iteration {}: no preference pairs", rep.iter));
    pool.insert(pool.end(), batch.records.begin(), batch.records.end());
    rep.n_prefs_total = static_cast<int>(pool.size());

    if (pool.empty()) {
      out.warnings.push_back(fmt::format("iteration {}: empty preference set, optimization skipped", rep.iter));
    } else {
      for (int step = 0; step < cfg.steps_per_iter; ++step) {
        std::vector<std::tuple<int, int, std::uint64_t>> draws(cfg.batch_pairs);
        for (auto& [idx, t, ns] : draws) {
          idx = static_cast<int>(rng.index(pool.size()));
          t = 1 + static_cast<int>(rng.index(T));
          ns = rng.next_u64();
        }
        auto [loss, grads] = loss_and_grad(theta.params, [&](ad::Tape& tape) {
          ad::Var acc = tape.scalar(0.0);
          for (const auto& [idx, t, ns] : draws) {
            const PreferenceRecord& rec = pool[idx];
            acc = tape.add(acc, preference_loss_on_tape(tape, theta, ref, rec, *by_id.at(rec.complex_id), t, ns,
                                                        cfg.beta, rec.margin));
          }
          return tape.scale(acc, 1.0 / cfg.batch_pairs);
        });
        adam.step(theta.params.store, std::move(grads), trainable);
        rep.losses.push_back(loss);
      }
    }

    double imp = 0.0;
    for (const auto& rec : batch.records) {
      const ComplexInstance& c = *by_id.at(rec.complex_id);
      const int t = 1 + static_cast<int>(rng.index(T));
      Rng a(rng.next_u64());
      Rng b = a;
      imp += implicit_reward(theta, ref, rec.y_w, c, t, a, cfg.beta) - implicit_reward(theta, ref, rec.y_l, c, t, b, cfg.beta);
    }
    if (!batch.records.empty()) rep.mean_implicit_reward = imp / static_cast<double>(batch.records.size());

    rep.mean_rhat_val = mean_collective_reward(theta, val, cfg.val_samples, cfg.val_temperature, cfg.w, val_seed, ep);
    out.policies.push_back(theta.params);
    out.iterations.push_back(std::move(rep));
  }

  for (int i = 1; i < static_cast<int>(out.iterations.size()); ++i)
    if (out.iterations[i].mean_rhat_val > out.iterations[out.best].mean_rhat_val) out.best = i;
  return out;
}

}  // namespace abd
