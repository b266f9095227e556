#include <doctest.h>

#include "abd/autodiff.hpp"
#include "abd/params.hpp"
#include "support.hpp"

using namespace abd;

namespace {

std::vector<double> randn(Rng& r, int n, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = s * r.normal();
  return v;
}

using Build = std::function<ad::Var(ad::Tape&, ad::Var, ad::Var, ad::Var)>;

// Compares tape gradients of build(a, b, row) with finite differences.
double check(const Build& build) {
  Rng r(21);
  ParamStore ps;
  ps.add("a", 3, 4, randn(r, 12));
  ps.add("b", 4, 3, randn(r, 12));
  ps.add("row", 1, 3, randn(r, 3));
  auto eval = [&](Gradients* g) {
    ad::Tape tape;
    ad::Var out = build(tape, tape.param(ps, 0), tape.param(ps, 1), tape.param(ps, 2));
    if (g) tape.backward(out, *g);
    return tape.item(out);
  };
  Gradients g(ps);
  eval(&g);
  return test::rel_error(g.flatten(), test::numeric_grad(ps, [&] { return eval(nullptr); }));
}

}  // namespace

TEST_CASE("matmul, add_row, silu, softplus") {
  CHECK(check([](ad::Tape& t, ad::Var a, ad::Var b, ad::Var row) {
          return t.sum(t.softplus(t.silu(t.add_row(t.matmul(a, b), row))));
        }) < 1e-7);
}

TEST_CASE("elementwise arithmetic") {
  CHECK(check([](ad::Tape& t, ad::Var a, ad::Var b, ad::Var) {
          ad::Var c = t.matmul(a, b);
          ad::Var d = t.sub(t.mul(c, c), t.scale(c, 0.3));
          return t.sum(t.add_scalar(t.add(t.square(d), c), 2.0));
        }) < 1e-7);
}

TEST_CASE("log_softmax, pick, clamp_min") {
  CHECK(check([](ad::Tape& t, ad::Var a, ad::Var b, ad::Var) {
          ad::Var lp = t.log_softmax_rows(t.matmul(a, b));
          return t.sum(t.clamp_min(t.pick(lp, {0, 2, 1}), -50.0));
        }) < 1e-7);
}

TEST_CASE("gather, concat, broadcast and mean") {
  CHECK(check([](ad::Tape& t, ad::Var a, ad::Var b, ad::Var row) {
          ad::Var g = t.gather_rows(b, {0, 3, -1, 2, 1, 1}, 2);
          const std::array<ad::Var, 2> parts{g, t.broadcast_rows(row, 3)};
          ad::Var c = t.concat_cols(parts);
          return t.sum(t.square(t.mean_rows(t.mul(c, t.concat_cols(std::array<ad::Var, 2>{t.silu(g), t.matmul(a, b)})))));
        }) < 1e-7);
}

TEST_CASE("row_matvec3") {
  Rng r(5);
  std::vector<double> mats;
  for (int i = 0; i < 3; ++i) {
    const auto m = test::random_rotation(r).row_major();
    mats.insert(mats.end(), m.begin(), m.end());
  }
  CHECK(check([&](ad::Tape& t, ad::Var a, ad::Var b, ad::Var) {
          return t.sum(t.square(t.row_matvec3(mats, t.matmul(a, b))));
        }) < 1e-7);
}

TEST_CASE("map_rows through so(3) exp") {
  CHECK(check([](ad::Tape& t, ad::Var a, ad::Var b, ad::Var) {
          ad::Var w = t.scale(t.matmul(a, b), 0.2);
          ad::Var s = t.map_rows<3, 1>(w, [](int, const std::array<Dual<3>, 3>& x) {
            const auto R = so3::exp(x);
            Dual<3> acc = 0.0;
            for (int k = 0; k < 9; ++k) acc += R[k] * (k % 4 == 0 ? (R[k] - 1.0) : R[k]);
            return std::array<Dual<3>, 1>{acc};
          });
          return t.sum(s);
        }) < 1e-7);
}

TEST_CASE("forward values") {
  ad::Tape t;
  ad::Var a = t.constant(2, 2, {1, 2, 3, 4});
  ad::Var b = t.constant(2, 2, {0, 1, 1, 0});
  const auto v = t.value(t.matmul(a, b));
  CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{2, 1, 4, 3});
  const auto ls = t.value(t.log_softmax_rows(t.constant(1, 3, {1000, 1000, 1000})));
  for (double x : ls) CHECK(x == doctest::Approx(-std::log(3.0)));
  CHECK(t.item(t.sum(t.softplus(t.constant(1, 2, {-800, 800})))) == doctest::Approx(800.0));
}

TEST_CASE("disabled gradients leave no closures") {
  Rng r(1);
  ParamStore ps;
  ps.add("w", 2, 2, randn(r, 4));
  ad::Tape t;
  t.set_grad_enabled(false);
  ad::Var out = t.sum(t.square(t.param(ps, 0)));
  Gradients g(ps);
  t.backward(out, g);
  CHECK(g.norm() == 0.0);
}

TEST_CASE("Adam respects the trainable mask and clipping") {
  Rng r(2);
  ParamStore ps;
  ps.add("a", 1, 3, randn(r, 3));
  ps.add("b", 1, 3, randn(r, 3));
  const auto before = ps.flatten();
  Gradients g(ps);
  for (int i = 0; i < 2; ++i)
    for (auto& x : g.at(i)) x = 1e6;
  Adam opt(ps, {0.1, 0.9, 0.999, 1e-8, 1.0});
  opt.step(ps, g, [](int i) { return i == 0; });
  const auto after = ps.flatten();
  for (int k = 0; k < 3; ++k) CHECK(after[k] == doctest::Approx(before[k] - 0.1).epsilon(1e-6));
  for (int k = 3; k < 6; ++k) CHECK(after[k] == before[k]);
}
