#include <doctest.h>

#include <map>
#include <set>

#include "abd/align.hpp"
#include "abd/errors.hpp"
#include "support.hpp"

using namespace abd;

namespace {

ScoredSample scored(const std::string& id, double r_att, double r_rep, std::uint64_t seed = 0) {
  ScoredSample s;
  s.design.complex_id = id;
  s.design.seed = seed;
  s.r = {r_att, r_rep};
  return s;
}

struct Toy {
  ComplexInstance complex;
  DiffusionModel ref;
  DiffusionModel theta;
  PreferenceRecord rec;
};

// Two-residue complex, a reference policy and a perturbed copy of it.
Toy make_toy(std::uint64_t seed, double perturb = 0.05) {
  Toy toy{test::toy_complex(seed, 2), test::tiny_model(seed), {}, {}};
  toy.theta = toy.ref;
  Rng r(seed);
  auto flat = toy.theta.params.store.flatten();
  for (auto& v : flat) v += perturb * r.normal();
  toy.theta.params.store.assign_flat(flat);
  toy.rec.complex_id = toy.complex.id;
  toy.rec.y_w = Design{toy.complex.id, random_cdr(toy.complex, r), std::nullopt, 1};
  toy.rec.y_l = Design{toy.complex.id, random_cdr(toy.complex, r), std::nullopt, 2};
  toy.rec.margin = 0.7;
  return toy;
}

}  // namespace

TEST_CASE("Bradley-Terry probability") {
  CHECK(bt_prob(2.0, 2.0) == 0.5);
  CHECK(bt_prob(std::log(3.0), 0.0) == doctest::Approx(0.75).epsilon(1e-15));
  Rng r(81);
  for (int i = 0; i < 1000; ++i) {
    const double a = 50 * r.normal(), b = 50 * r.normal();
    CHECK(bt_prob(a, b) + bt_prob(b, a) == 1.0);
  }
  CHECK(bt_prob(1000.0, 0.0) == 1.0);
  CHECK(bt_prob(0.0, 1000.0) >= 0.0);
}

TEST_CASE("preference construction") {
  Rng r(82);
  const Weights w{0.25, 0.75};
  SUBCASE("one pair") {
    const PreferenceBatch b = build_preferences({scored("a", 5, 5), scored("a", 3, 3)}, w, r);
    REQUIRE(b.records.size() == 1);
    CHECK(b.records[0].rhat_w == 5.0);
    CHECK(b.records[0].rhat_l == 3.0);
    CHECK(b.records[0].margin == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("ties are dropped") {
    const PreferenceBatch b = build_preferences({scored("a", 1, 2), scored("a", 1, 2)}, w, r);
    CHECK(b.records.empty());
    CHECK(b.ties == 1);
  }
  SUBCASE("many samples") {
    std::vector<ScoredSample> s;
    for (int c = 0; c < 10; ++c)
      for (int j = 0; j < 128; ++j) s.push_back(scored("cx" + std::to_string(c), r.normal(), 10 * r.normal(), j));
    const PreferenceBatch b = build_preferences(s, w, r);
    CHECK(b.records.size() == 640);
    std::map<std::string, std::set<std::uint64_t>> used;
    for (const auto& rec : b.records) {
      CHECK(rec.rhat_w > rec.rhat_l);
      CHECK(rec.y_w.complex_id == rec.complex_id);
      CHECK(rec.y_l.complex_id == rec.complex_id);
      CHECK(rec.margin == doctest::Approx(std::log(rec.rhat_w - rec.rhat_l)).epsilon(1e-9));
      CHECK(used[rec.complex_id].insert(rec.y_w.seed).second);
      CHECK(used[rec.complex_id].insert(rec.y_l.seed).second);
    }
  }
}

TEST_CASE("per-complex reward offsets leave preferences bit-identical") {
  Rng gen(83);
  std::vector<ScoredSample> s;
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 16; ++j) s.push_back(scored("cx" + std::to_string(c), gen.normal(), 5 * gen.normal(), j));
  for (const double scale : {1e-3, 1.0, 1e3, 1e6}) {
    std::vector<ScoredSample> shifted = s;
    for (auto& x : shifted) x.offset = scale * static_cast<double>(fnv1a64(x.design.complex_id) % 1000);
    Rng r1(5), r2(5);
    const PreferenceBatch a = build_preferences(s, Weights{0.25, 0.75}, r1);
    const PreferenceBatch b = build_preferences(shifted, Weights{0.25, 0.75}, r2);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].y_w.seed == b.records[i].y_w.seed);
      CHECK(a.records[i].y_l.seed == b.records[i].y_l.seed);
      CHECK(a.records[i].margin == b.records[i].margin);
    }
  }
}

TEST_CASE("losses at the reference policy") {
  Toy toy = make_toy(84);
  Rng r(1);
  for (int t : {1, 7, 20}) {
    PreferenceRecord rec = toy.rec;
    rec.margin = 0.0;
    CHECK(std::abs(poea_loss(toy.ref, toy.ref, rec, toy.complex, t, r, 100.0) - std::log(2.0)) < 1e-9);
    CHECK(std::abs(dpo_loss(toy.ref, toy.ref, toy.rec, toy.complex, t, r, 100.0) - std::log(2.0)) < 1e-9);
    const double mu = 0.9;
    rec.margin = mu;
    CHECK(std::abs(poea_loss(toy.ref, toy.ref, rec, toy.complex, t, r, 100.0) - std::log1p(std::exp(mu))) < 1e-9);
  }
}

TEST_CASE("dpo is poea with a zero margin") {
  Toy toy = make_toy(85);
  PreferenceRecord rec = toy.rec;
  rec.margin = 0.0;
  for (int t : {2, 15}) {
    Rng a(9), b(9);
    CHECK(poea_loss(toy.theta, toy.ref, rec, toy.complex, t, a, 1.0) ==
          dpo_loss(toy.theta, toy.ref, toy.rec, toy.complex, t, b, 1.0));
  }
}

TEST_CASE("poea equals the margin-shifted dpo loss") {
  Toy toy = make_toy(86);
  for (int t : {3, 12}) {
    Rng a(4), b(4);
    const double imp = implicit_margin(toy.theta, toy.ref, toy.rec, toy.complex, t, a, 1.0);
    const double poea = poea_loss(toy.theta, toy.ref, toy.rec, toy.complex, t, b, 1.0);
    CHECK(std::abs(poea - preference_loss_from_margin(imp, toy.rec.margin)) < 1e-12);
    CHECK(std::abs(poea - preference_loss_from_margin(imp - toy.rec.margin, 0.0)) < 1e-12);
  }
}

TEST_CASE("loss range") {
  for (double z : {-1e3, -5.0, 0.0, 5.0, 30.0}) {
    const double l = preference_loss_from_margin(z, 0.0);
    CHECK(std::isfinite(l));
    CHECK(l > 0.0);
  }
  CHECK(preference_loss_from_margin(1e3, 0.0) < 1e-300);
  CHECK(preference_loss_from_margin(-1e3, 0.0) == doctest::Approx(1e3));
  double prev = preference_loss_from_margin(-10, 0);
  for (double z = -9.5; z <= 10; z += 0.5) {
    const double l = preference_loss_from_margin(z, 0.0);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("preference loss gradient matches finite differences") {
  Toy toy = make_toy(87);
  for (int t : {4, 13}) {
    auto f = [&](ad::Tape& tape) {
      return preference_loss_on_tape(tape, toy.theta, toy.ref, toy.rec, toy.complex, t, 1234, 0.01, toy.rec.margin);
    };
    const auto [loss, g] = loss_and_grad(toy.theta.params, f);
    REQUIRE(loss > 1e-3);
    const auto num = test::numeric_grad(toy.theta.params.store, [&] {
      ad::Tape tape;
      tape.set_grad_enabled(false);
      return tape.item(f(tape));
    });
    CHECK(test::rel_error(g.flatten(), num) < 1e-5);
  }
}

TEST_CASE("raising the winner's log-probability lowers the loss") {
  Toy toy = make_toy(88);
  const int t = 6;
  const std::uint64_t seed = 77;
  auto value = [&](const DiffusionModel& th) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    return tape.item(preference_loss_on_tape(tape, th, toy.ref, toy.rec, toy.complex, t, seed, 0.01, toy.rec.margin));
  };
  // The winner's log-probability enters the loss only through the implicit
  // margin, so its partial derivative is -k * sigma(-z).
  const double base = value(toy.theta);
  Rng a(seed), b(seed);
  const double z = implicit_margin(toy.theta, toy.ref, toy.rec, toy.complex, t, a, 0.01) - toy.rec.margin;
  const double k = 0.01 * toy.theta.schedule.steps();
  for (double dl : {1e-3, 1e-1, 1.0}) {
    const double raised = preference_loss_from_margin(z + k * dl, 0.0);
    CHECK(raised < base);
  }
  (void)b;
}

TEST_CASE("implicit reward") {
  Toy toy = make_toy(89);
  Rng r(3);
  CHECK(implicit_reward(toy.ref, toy.ref, toy.rec.y_w, toy.complex, 5, r, 100.0) == 0.0);
  Rng a(8), b(8);
  const double r1 = implicit_reward(toy.theta, toy.ref, toy.rec.y_w, toy.complex, 5, a, 1.0);
  const double r3 = implicit_reward(toy.theta, toy.ref, toy.rec.y_w, toy.complex, 5, b, 3.0);
  CHECK(r3 == doctest::Approx(3.0 * r1).epsilon(1e-12));
}

TEST_CASE("temperature schedule") {
  AlignConfig c;
  CHECK(temperature_at(0, c) == 1.5);
  CHECK(temperature_at(1, c) == doctest::Approx(1.45).epsilon(1e-15));
  CHECK(temperature_at(400, c) == doctest::Approx(1.0).epsilon(1e-15));
  for (int k = 0; k < 20; ++k) CHECK(temperature_at(k + 1, c) <= temperature_at(k, c));
  CHECK_THROWS_AS(temperature_at(-1, c), DomainError);
}

TEST_CASE("alignment configuration validation") {
  AlignConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.temp0 = 0.9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.w = {0.5, 0.6};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

namespace {

struct AlignFixture {
  std::vector<ComplexInstance> train, val;
  DiffusionModel ref;
};

const AlignFixture& fixture() {
  static const AlignFixture f = [] {
    AlignFixture f;
    std::vector<TrainExample> data;
    for (int k = 0; k < 4; ++k) {
      const ComplexInstance c = test::toy_complex(900 + k, 3);
      AnnealParams ap;
      ap.steps = 1500;
      data.push_back({c, gen_reference_cdr(c, 900 + k, ap).cdr});
      (k < 3 ? f.train : f.val).push_back(c);
    }
    f.ref = test::tiny_model(900);
    Rng r(900);
    train_diffusion(f.ref, data, 400, 4, r, {3e-3});
    return f;
  }();
  return f;
}

AlignConfig small_align(double beta) {
  AlignConfig c;
  c.beta = beta;
  c.iterations = 1;
  c.prompts_per_iter = 3;
  c.samples_per_prompt = 8;
  c.steps_per_iter = 60;
  c.batch_pairs = 4;
  c.val_samples = 4;
  c.opt.lr = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("zero iterations return the reference") {
  const AlignFixture& f = fixture();
  AlignConfig c = small_align(100);
  c.iterations = 0;
  const AlignResult res = iterate_align(f.ref, f.train, f.val, c, 1);
  CHECK(res.policies.size() == 1);
  CHECK(res.best == 0);
  CHECK(res.best_params().store == f.ref.params.store);
}

TEST_CASE("preference sets accumulate across iterations") {
  const AlignFixture& f = fixture();
  AlignConfig c = small_align(100);
  c.iterations = 3;
  c.steps_per_iter = 5;
  const AlignResult res = iterate_align(f.ref, f.train, f.val, c, 2);
  REQUIRE(res.iterations.size() == 4);
  int total = 0;
  for (int k = 1; k <= 3; ++k) {
    total += res.iterations[k].n_prefs;
    CHECK(res.iterations[k].n_prefs_total == total);
    CHECK(res.iterations[k].temperature == temperature_at(k - 1, c));
    CHECK(static_cast<int>(res.iterations[k].losses.size()) == 5);
  }
  CHECK(res.policies.size() == 4);
  for (int k = 1; k < 4; ++k) CHECK(res.iterations[res.best].mean_rhat_val >= res.iterations[k].mean_rhat_val);
  for (int i = 0; i < f.ref.params.store.count(); ++i)
    if (f.ref.params.is_encoder_param(i)) {
      const auto a = f.ref.params.store.data(i), b = res.policies.back().store.data(i);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
}

TEST_CASE("alignment is reproducible") {
  const AlignFixture& f = fixture();
  const AlignConfig c = small_align(100);
  const AlignResult a = iterate_align(f.ref, f.train, f.val, c, 3);
  const AlignResult b = iterate_align(f.ref, f.train, f.val, c, 3);
  CHECK(a.policies.back().store == b.policies.back().store);
  CHECK(a.iterations.back().losses == b.iterations.back().losses);
}

// Symmetric divergence between an aligned policy and the reference,
// E_theta[log theta/ref] + E_ref[log ref/theta], each term estimated from
// single-step log ratios over 512 samples.
double divergence_after_alignment(double beta) {
  const AlignFixture& f = fixture();
  AlignConfig c = small_align(beta);
  c.opt.lr = 1e-3;
  const AlignResult res = iterate_align(f.ref, f.train, f.val, c, 4);
  DiffusionModel theta = f.ref;
  theta.params = res.policies.back();
  double sum = 0;
  const int n = 512;
  Rng r(44);
  for (int i = 0; i < n; ++i) {
    const ComplexInstance& cx = f.train[i % f.train.size()];
    const int t = 1 + static_cast<int>(r.index(f.ref.schedule.steps()));
    const Design yt = sample_cdr(theta, cx, 1.0, 10000 + i);
    const Design yr = sample_cdr(f.ref, cx, 1.0, 10000 + i);
    sum += implicit_reward(theta, f.ref, yt, cx, t, r, beta) / beta;
    sum -= implicit_reward(theta, f.ref, yr, cx, t, r, beta) / beta;
  }
  return sum / n;
}

TEST_CASE("stronger regularization keeps the policy closer to the reference") {
  const double d1 = divergence_after_alignment(0.01), d2 = divergence_after_alignment(0.1),
               d3 = divergence_after_alignment(1.0);
  MESSAGE("divergence at beta 0.01, 0.1, 1: ", d1, " ", d2, " ", d3);
  CHECK(d1 > d2);
  CHECK(d2 > d3);
}

TEST_CASE("regularization pressure saturates once beta * T dominates the margins") {
  // Every pair sits on the linear or flat branch of the softplus, and Adam
  // removes the remaining scale, so the trajectories barely depend on beta.
  const double d10 = divergence_after_alignment(10.0), d100 = divergence_after_alignment(100.0),
               d1000 = divergence_after_alignment(1000.0);
  MESSAGE("divergence at beta 10, 100, 1000: ", d10, " ", d100, " ", d1000);
  CHECK(std::abs(d100 - d10) < 0.1 * d10);
  CHECK(std::abs(d1000 - d10) < 0.1 * d10);
}
