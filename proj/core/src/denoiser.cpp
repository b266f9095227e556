#include "abd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {
namespace {

std::vector<double> normal_init(int rows, int cols, double sd, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (double& x : w) x = sd * rng.normal();
  return w;
}

int single_dim(const DenoiserConfig& c) { return kNumAminoAcids + c.time_dim + 4 + kFrameBlock; }
int pair_dim(const DenoiserConfig& c) { return 2 * kChainBlock + c.neighbors * kPairBlock; }
int enc_input_dim(const DenoiserConfig& c) { return c.enc_embed + 2 + c.enc_pos_dim; }

void add_linear(ParamStore& s, const std::string& name, int in, int out, double gain, Rng& rng) {
  s.add(name + ".w", in, out, normal_init(in, out, gain / std::sqrt(static_cast<double>(in)), rng));
  s.add(name + ".b", 1, out, std::vector<double>(out, 0.0));
}

ad::Var linear(ad::Tape& tape, const DenoiserParams& p, const std::string& name, ad::Var x) {
  const auto& s = p.store;
  return tape.add_row(tape.matmul(x, tape.param(s, s.index_of(name + ".w"))), tape.param(s, s.index_of(name + ".b")));
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, Rng& rng) {
  if (cfg.hidden < 1 || cfg.depth < 0 || cfg.neighbors < 1 || cfg.time_dim < 2 || cfg.time_dim % 2 != 0 ||
      cfg.enc_pos_dim % 2 != 0 || cfg.steps < 1 || !(cfg.length_scale > 0.0))
    throw ConfigError("denoiser: invalid architecture configuration");
  DenoiserParams p;
  p.config = cfg;
  auto& s = p.store;
  s.add("encoder.embed", kNumAminoAcids + 1, cfg.enc_embed, normal_init(kNumAminoAcids + 1, cfg.enc_embed, 0.5, rng));
  add_linear(s, "encoder.l1", 2 * enc_input_dim(cfg), cfg.enc_hidden, 1.0, rng);
  add_linear(s, "encoder.l2", cfg.enc_hidden, cfg.enc_out, 1.0, rng);
  add_linear(s, "encoder.mlm", cfg.enc_out, kNumAminoAcids, 1.0, rng);
  add_linear(s, "single", single_dim(cfg) + cfg.enc_out, cfg.hidden, 1.0, rng);
  add_linear(s, "pair", pair_dim(cfg) + cfg.neighbors * cfg.enc_out, cfg.hidden, 1.0, rng);
  for (int l = 0; l < cfg.depth; ++l) add_linear(s, fmt::format("trunk.{}", l), cfg.hidden, cfg.hidden, 0.5, rng);
  add_linear(s, "head.type", cfg.hidden, kNumAminoAcids, 0.1, rng);
  add_linear(s, "head.pos", cfg.hidden, 3, 0.1, rng);
  add_linear(s, "head.rot", cfg.hidden, 3, 0.1, rng);
  return p;
}

bool DenoiserParams::is_encoder_param(int index) const { return store.name(index).starts_with("encoder."); }

void DenoiserParams::zero_heads() {
  for (const char* h : {"head.type", "head.pos", "head.rot"}) {
    for (const char* suffix : {".w", ".b"}) {
      auto d = store.data(store.index_of(std::string(h) + suffix));
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
}

FeatureSet featurize(const DenoiserConfig& cfg, const ComplexInstance& complex, const CdrState& noisy, int t) {
  if (t < 1 || t > cfg.steps) throw DomainError(fmt::format("featurize: step {} outside [1,{}]", t, cfg.steps));
  const int m = noisy.size();
  if (m != complex.cdr_span.length)
    throw DataError(fmt::format("featurize: CDR has {} residues, complex expects {}", m, complex.cdr_span.length));
  const int K = cfg.neighbors;
  const double scale = cfg.length_scale;

  FeatureSet f;
  f.cdr_len = m;
  f.neighbors = K;
  f.t = t;
  f.single_dim = single_dim(cfg);
  f.pair_dim = pair_dim(cfg);

  // Context-encoder sequence: antibody chain (CDR masked) then antigen.
  const int nf = complex.framework_count();
  const int chain_len = nf + m;
  std::vector<int> context_token(complex.context.size());
  f.tokens.assign(chain_len, kMaskToken);
  f.segments.assign(chain_len, 0);
  f.positions.resize(chain_len);
  std::iota(f.positions.begin(), f.positions.end(), 0);
  int fi = 0, ai = 0;
  for (std::size_t j = 0; j < complex.context.size(); ++j) {
    const auto& r = complex.context[j];
    if (r.role == Role::Framework) {
      const int pos = complex.chain_position(fi++);
      f.tokens[pos] = r.state.aa;
      context_token[j] = pos;
    } else {
      f.tokens.push_back(r.state.aa);
      f.segments.push_back(1);
      f.positions.push_back(ai++);
      context_token[j] = chain_len + ai - 1;
    }
  }
  for (int i = 0; i < m; ++i) f.self_tokens.push_back(complex.cdr_span.start + i);

  f.single.assign(static_cast<std::size_t>(m) * f.single_dim, 0.0);
  f.pair.assign(static_cast<std::size_t>(m) * f.pair_dim, 0.0);
  f.neighbor_tokens.assign(static_cast<std::size_t>(m) * K, -1);
  f.head_frames.assign(static_cast<std::size_t>(m) * 9, 0.0);
  const ComplexFrame frame = complex_frame(complex);

  const double tau = static_cast<double>(t) / cfg.steps;
  std::vector<std::pair<double, int>> order(complex.context.size());
  for (int i = 0; i < m; ++i) {
    const auto& res = noisy.residues[i];
    if (res.aa < 0 || res.aa >= kNumAminoAcids) throw DataError("featurize: residue type out of range");
    double* s = f.single.data() + static_cast<std::size_t>(i) * f.single_dim;
    s[res.aa] = 1.0;
    for (int k = 0; k < cfg.time_dim / 2; ++k) {
      const double w = std::numbers::pi / 2.0 * std::pow(2.0, k);
      s[kNumAminoAcids + 2 * k] = std::sin(w * tau);
      s[kNumAminoAcids + 2 * k + 1] = std::cos(w * tau);
    }
    const double u = (i + 1.0) / (m + 1.0);
    double* idx = s + kNumAminoAcids + cfg.time_dim;
    idx[0] = std::sin(std::numbers::pi * u);
    idx[1] = std::cos(std::numbers::pi * u);
    idx[2] = std::sin(2.0 * std::numbers::pi * u);
    idx[3] = std::cos(2.0 * std::numbers::pi * u);

    // Pose in the complex frame.
    const Vec3 z = frame.to_local(res.x) / scale;
    const Mat3 ol = frame.to_local(res.orient).matrix();
    double* fr = idx + 4;
    for (int k = 0; k < 3; ++k) fr[k] = z[k];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        fr[3 + 3 * r + c] = ol(r, c);
        f.head_frames[9 * static_cast<std::size_t>(i) + 3 * r + c] = ol(c, r);
      }

    const Mat3 to_local = res.orient.matrix().transpose();
    double* p = f.pair.data() + static_cast<std::size_t>(i) * f.pair_dim;
    const Vec3& prev = i == 0 ? complex.anchor_before().x : noisy.residues[i - 1].x;
    const Vec3& next = i == m - 1 ? complex.anchor_after().x : noisy.residues[i + 1].x;
    for (int c = 0; c < 2; ++c) {
      const Vec3 d = to_local * ((c == 0 ? prev : next) - res.x) / scale;
      p[c * kChainBlock + 0] = d.x();
      p[c * kChainBlock + 1] = d.y();
      p[c * kChainBlock + 2] = d.z();
      p[c * kChainBlock + 3] = d.norm();
    }

    for (std::size_t j = 0; j < complex.context.size(); ++j)
      order[j] = {(complex.context[j].state.x - res.x).squaredNorm(), static_cast<int>(j)};
    std::sort(order.begin(), order.end());
    const int take = std::min<int>(K, static_cast<int>(order.size()));
    for (int k = 0; k < take; ++k) {
      const auto& ctx = complex.context[order[k].second];
      double* b = p + 2 * kChainBlock + k * kPairBlock;
      const Vec3 d = to_local * (ctx.state.x - res.x) / scale;
      const Vec3 dsc = to_local * (ctx.state.side_chain() - res.x) / scale;
      b[0] = d.x();
      b[1] = d.y();
      b[2] = d.z();
      b[3] = dsc.x();
      b[4] = dsc.y();
      b[5] = dsc.z();
      b[6] = d.norm();
      b[7] = ctx.role == Role::Antigen ? 1.0 : 0.0;
      b[8] = 1.0;  // present
      f.neighbor_tokens[static_cast<std::size_t>(i) * K + k] = context_token[order[k].second];
    }
    // Entries k >= take stay zero: zero displacement, mask flag 0.
  }
  return f;
}

ad::Var encode_context(ad::Tape& tape, const DenoiserParams& params, const std::vector<int>& tokens,
                       const std::vector<int>& segments, const std::vector<int>& positions) {
  const auto& cfg = params.config;
  const int L = static_cast<int>(tokens.size());
  const int P = cfg.enc_pos_dim;
  std::vector<double> fixed(static_cast<std::size_t>(L) * (2 + P), 0.0);
  for (int i = 0; i < L; ++i) {
    double* r = fixed.data() + static_cast<std::size_t>(i) * (2 + P);
    r[segments[i] == 0 ? 0 : 1] = 1.0;
    for (int k = 0; k < P / 2; ++k) {
      const double w = std::pow(3.0, -k);
      r[2 + 2 * k] = std::sin(w * positions[i]);
      r[2 + 2 * k + 1] = std::cos(w * positions[i]);
    }
  }
  const auto& s = params.store;
  ad::Var emb = tape.gather_rows(tape.param(s, s.index_of("encoder.embed")), tokens, 1);
  const std::array<ad::Var, 2> parts{emb, tape.constant(L, 2 + P, std::move(fixed))};
  ad::Var x0 = tape.concat_cols(parts);
  ad::Var ctx = tape.broadcast_rows(tape.mean_rows(x0), L);
  const std::array<ad::Var, 2> both{x0, ctx};
  ad::Var h = tape.silu(linear(tape, params, "encoder.l1", tape.concat_cols(both)));
  return tape.silu(linear(tape, params, "encoder.l2", h));
}

DenoiseVars denoise_on_tape(ad::Tape& tape, const DenoiserParams& params, const FeatureSet& f) {
  const auto& cfg = params.config;
  if (f.neighbors != cfg.neighbors || f.single_dim != single_dim(cfg) || f.pair_dim != pair_dim(cfg))
    throw DomainError("denoise: feature shapes do not match the parameter configuration");
  const int m = f.cdr_len;
  ad::Var enc = encode_context(tape, params, f.tokens, f.segments, f.positions);
  ad::Var self_emb = tape.gather_rows(enc, f.self_tokens, 1);
  ad::Var nb_emb = tape.gather_rows(enc, f.neighbor_tokens, f.neighbors);
  const std::array<ad::Var, 2> single_parts{tape.constant(m, f.single_dim, f.single), self_emb};
  const std::array<ad::Var, 2> pair_parts{tape.constant(m, f.pair_dim, f.pair), nb_emb};
  ad::Var h = tape.silu(tape.add(linear(tape, params, "single", tape.concat_cols(single_parts)),
                                 linear(tape, params, "pair", tape.concat_cols(pair_parts))));
  for (int l = 0; l < cfg.depth; ++l) h = tape.add(h, tape.silu(linear(tape, params, fmt::format("trunk.{}", l), h)));
  // Heads act in the complex frame; rotate them into each residue's frame.
  ad::Var pos = tape.row_matvec3(f.head_frames, linear(tape, params, "head.pos", h));
  ad::Var rot = tape.row_matvec3(f.head_frames, linear(tape, params, "head.rot", h));
  if (f.head_scale != 1.0) {
    pos = tape.scale(pos, f.head_scale);
    rot = tape.scale(rot, f.head_scale);
  }
  return {linear(tape, params, "head.type", h), pos, rot};
}

DenoiseOutput decode_heads(const DenoiserParams& params, const ad::Tape& tape, const DenoiseVars& v,
                           const CdrState& noisy) {
  const int m = noisy.size();
  const auto logits = tape.value(v.logits);
  const auto off = tape.value(v.offset);
  const auto rv = tape.value(v.rotvec);
  auto finite = [](std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(logits) || !finite(off) || !finite(rv)) {
    throw NumericError(fmt::format("denoise: non-finite head output (parameter norm {:.6g}, finite params: {})",
                                   params.store.norm(), params.store.all_finite()));
  }
  DenoiseOutput out;
  out.type_logits.resize(m);
  out.x_pred.resize(m);
  out.rot_pred.resize(m);
  const double scale = params.config.length_scale;
  for (int i = 0; i < m; ++i) {
    std::copy(logits.begin() + i * kNumAminoAcids, logits.begin() + (i + 1) * kNumAminoAcids,
              out.type_logits[i].begin());
    const auto& r = noisy.residues[i];
    out.x_pred[i] = r.x + r.orient * (Vec3(off[3 * i], off[3 * i + 1], off[3 * i + 2]) * scale);
    out.rot_pred[i] = r.orient * exp_map(AxisAngle{Vec3(rv[3 * i], rv[3 * i + 1], rv[3 * i + 2])});
  }
  return out;
}

DenoiseOutput denoise(const DenoiserParams& params, const FeatureSet& feats, const CdrState& noisy) {
  if (feats.cdr_len != noisy.size()) throw DomainError("denoise: features and CDR disagree on length");
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const DenoiseVars v = denoise_on_tape(tape, params, feats);
  return decode_heads(params, tape, v, noisy);
}

SequenceExample sequence_example(const ComplexInstance& complex, const CdrState& cdr) {
  SequenceExample ex;
  ex.span = complex.cdr_span;
  const int m = complex.cdr_span.length;
  ex.chain.assign(complex.framework_count() + m, 0);
  int fi = 0;
  for (const auto& r : complex.context) {
    if (r.role == Role::Framework) {
      ex.chain[complex.chain_position(fi++)] = r.state.aa;
    } else {
      ex.antigen.push_back(r.state.aa);
    }
  }
  if (cdr.size() != m) throw DataError("sequence_example: CDR length mismatch");
  for (int i = 0; i < m; ++i) ex.chain[complex.cdr_span.start + i] = cdr.residues[i].aa;
  return ex;
}

namespace {

struct MaskedInput {
  std::vector<int> tokens, segments, positions, targets, target_rows;
};

MaskedInput mask_example(const SequenceExample& ex) {
  MaskedInput in;
  const int n = static_cast<int>(ex.chain.size());
  if (ex.span.start < 0 || ex.span.length < 1 || ex.span.start + ex.span.length > n)
    throw DataError("pretrain: CDR span outside the chain");
  for (int i = 0; i < n; ++i) {
    const bool masked = i >= ex.span.start && i < ex.span.start + ex.span.length;
    in.tokens.push_back(masked ? kMaskToken : ex.chain[i]);
    in.segments.push_back(0);
    in.positions.push_back(i);
    if (masked) {
      in.target_rows.push_back(i);
      in.targets.push_back(ex.chain[i]);
    }
  }
  for (int k = 0; k < static_cast<int>(ex.antigen.size()); ++k) {
    in.tokens.push_back(ex.antigen[k]);
    in.segments.push_back(1);
    in.positions.push_back(k);
  }
  return in;
}

ad::Var masked_logits(ad::Tape& tape, const DenoiserParams& params, const MaskedInput& in) {
  ad::Var enc = encode_context(tape, params, in.tokens, in.segments, in.positions);
  ad::Var rows = tape.gather_rows(enc, in.target_rows, 1);
  return linear(tape, params, "encoder.mlm", rows);
}

}  // namespace

ad::Var masked_recovery_loss(ad::Tape& tape, const DenoiserParams& params, const SequenceExample& ex) {
  const MaskedInput in = mask_example(ex);
  ad::Var lp = tape.log_softmax_rows(masked_logits(tape, params, in));
  ad::Var picked = tape.pick(lp, in.targets);
  return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(in.targets.size()));
}

double masked_recovery_accuracy(const DenoiserParams& params, const SequenceExample& ex) {
  const MaskedInput in = mask_example(ex);
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const auto logits = tape.value(masked_logits(tape, params, in));
  int correct = 0;
  for (std::size_t r = 0; r < in.targets.size(); ++r) {
    const auto row = logits.subspan(r * kNumAminoAcids, kNumAminoAcids);
    const int arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += arg == in.targets[r];
  }
  return static_cast<double>(correct) / static_cast<double>(in.targets.size());
}

PretrainResult pretrain_encoder(DenoiserParams params, const std::vector<SequenceExample>& corpus, int steps,
                                Rng& rng, const AdamConfig& opt) {
  if (corpus.empty()) throw ConfigError("pretrain_encoder: empty corpus");
  if (steps < 0) throw ConfigError("pretrain_encoder: negative step count");
  PretrainResult out{std::move(params), {}};
  Adam adam(out.params.store, opt);
  const auto trainable = [&](int i) { return out.params.is_encoder_param(i); };
  for (int step = 0; step < steps; ++step) {
    const auto& ex = corpus[rng.index(corpus.size())];
    auto [loss, grads] = loss_and_grad(out.params, [&](ad::Tape& tape) {
      return masked_recovery_loss(tape, out.params, ex);
    });
    out.losses.push_back(loss);
    adam.step(out.params.store, std::move(grads), trainable);
  }
  return out;
}

std::pair<double, Gradients> loss_and_grad(const DenoiserParams& params,
                                           const std::function<ad::Var(ad::Tape&)>& closure) {
  ad::Tape tape;
  const ad::Var loss = closure(tape);
  const double value = tape.item(loss);
  if (!std::isfinite(value)) throw NumericError(fmt::format("loss_and_grad: non-finite loss {}", value));
  Gradients grads(params.store);
  tape.backward(loss, grads);
  return {value, std::move(grads)};
}

}  // namespace abd
