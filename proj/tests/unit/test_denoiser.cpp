#include <doctest.h>

#include "abd/denoiser.hpp"
#include "abd/errors.hpp"
#include "support.hpp"

using namespace abd;

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("features are invariant under rigid motions") {
  Rng r(31);
  const ComplexInstance c = test::toy_complex(31, 4);
  const CdrState cdr = random_cdr(c, r);
  const DenoiserConfig cfg = test::tiny_config();
  const FeatureSet f = featurize(cfg, c, cdr, 7);
  CHECK(f.single.size() == static_cast<std::size_t>(f.cdr_len * f.single_dim));
  CHECK(f.pair.size() == static_cast<std::size_t>(f.cdr_len * f.pair_dim));
  for (int k = 0; k < 5; ++k) {
    const RigidMotion g = test::random_motion(r);
    const FeatureSet fg = featurize(cfg, apply_rigid(c, g), apply_rigid(cdr, g), 7);
    CHECK(max_diff(f.single, fg.single) < 1e-9);
    CHECK(max_diff(f.pair, fg.pair) < 1e-9);
    CHECK(max_diff(f.head_frames, fg.head_frames) < 1e-9);
    CHECK(f.neighbor_tokens == fg.neighbor_tokens);
  }
}

TEST_CASE("denoiser outputs are equivariant") {
  Rng r(32);
  const ComplexInstance c = test::toy_complex(32, 4);
  const CdrState cdr = random_cdr(c, r);
  const DiffusionModel m = test::tiny_model(32);
  const DenoiseOutput o = denoise(m.params, diffusion_features(m, c, cdr, 9), cdr);
  for (int k = 0; k < 5; ++k) {
    const RigidMotion g = test::random_motion(r);
    const ComplexInstance cg = apply_rigid(c, g);
    const CdrState cdrg = apply_rigid(cdr, g);
    const DenoiseOutput og = denoise(m.params, diffusion_features(m, cg, cdrg, 9), cdrg);
    for (int i = 0; i < cdr.size(); ++i) {
      CHECK((og.x_pred[i] - g.apply(o.x_pred[i])).norm() < 1e-9);
      CHECK(geodesic_angle(og.rot_pred[i], g.rot * o.rot_pred[i]) < 1e-9);
      for (int a = 0; a < kNumAminoAcids; ++a) CHECK(std::abs(og.type_logits[i][a] - o.type_logits[i][a]) < 1e-9);
    }
  }
}

TEST_CASE("zero heads predict the input state") {
  Rng r(33);
  const ComplexInstance c = test::toy_complex(33);
  const CdrState cdr = random_cdr(c, r);
  DiffusionModel m = test::tiny_model(33);
  m.params.zero_heads();
  const DenoiseOutput o = denoise(m.params, diffusion_features(m, c, cdr, 5), cdr);
  for (int i = 0; i < cdr.size(); ++i) {
    CHECK(o.x_pred[i] == cdr.residues[i].x);
    CHECK((o.rot_pred[i].matrix() - cdr.residues[i].orient.matrix()).norm() < 1e-15);
    for (double l : o.type_logits[i]) CHECK(l == 0.0);
  }
}

TEST_CASE("head outputs have the documented shapes") {
  Rng r(34);
  const ComplexInstance c = test::toy_complex(34, 5);
  const CdrState cdr = random_cdr(c, r);
  const DiffusionModel m = test::tiny_model(34);
  ad::Tape tape;
  const DenoiseVars v = denoise_on_tape(tape, m.params, diffusion_features(m, c, cdr, 3));
  CHECK(tape.rows(v.logits) == 5);
  CHECK(tape.cols(v.logits) == kNumAminoAcids);
  CHECK(tape.cols(v.offset) == 3);
  CHECK(tape.cols(v.rotvec) == 3);
}

TEST_CASE("masked recovery loss gradient matches finite differences") {
  const ComplexInstance c = test::toy_complex(35);
  Rng r(35);
  const SequenceExample ex = sequence_example(c, random_cdr(c, r));
  DenoiserParams p = test::tiny_model(35).params;
  const auto [loss, g] = loss_and_grad(p, [&](ad::Tape& t) { return masked_recovery_loss(t, p, ex); });
  const auto num = test::numeric_grad(p.store, [&] {
    ad::Tape t;
    t.set_grad_enabled(false);
    return t.item(masked_recovery_loss(t, p, ex));
  });
  CHECK(loss > 0.0);
  CHECK(test::rel_error(g.flatten(), num) < 1e-6);
}

TEST_CASE("pre-training moves only the encoder and lowers the loss") {
  std::vector<SequenceExample> corpus;
  Rng r(36);
  for (int k = 0; k < 4; ++k) {
    const ComplexInstance c = test::toy_complex(100 + k);
    corpus.push_back(sequence_example(c, random_cdr(c, r)));
  }
  const DenoiserParams p0 = test::tiny_model(36).params;
  Rng tr(1);
  const PretrainResult res = pretrain_encoder(p0, corpus, 300, tr, {1e-2});
  REQUIRE(res.losses.size() == 300);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += res.losses[i];
    tail += res.losses[280 + i];
  }
  CHECK(tail < 0.5 * head);
  for (int i = 0; i < p0.store.count(); ++i) {
    const auto a = p0.store.data(i), b = res.params.store.data(i);
    const bool same = std::equal(a.begin(), a.end(), b.begin());
    CHECK(same == !p0.is_encoder_param(i));
  }
  CHECK_THROWS_AS(pretrain_encoder(p0, {}, 10, tr), ConfigError);
}
