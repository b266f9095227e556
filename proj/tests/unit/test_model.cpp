#include <doctest.h>

#include "abd/errors.hpp"
#include "abd/model.hpp"
#include "support.hpp"

using namespace abd;

TEST_CASE("amino-acid alphabet") {
  for (int i = 0; i < kNumAminoAcids; ++i) CHECK(aa_index(aa_letter(i)) == i);
  CHECK_THROWS_AS(aa_index('B'), DataError);
  CHECK_THROWS_AS(aa_index('a'), DataError);
  CHECK(side_chain_size(aa_index('G')) < 0.1);
  CHECK(side_chain_size(aa_index('W')) == doctest::Approx(3.0).epsilon(0.1));
  for (int i = 0; i < kNumAminoAcids; ++i) CHECK(side_chain_offset(i).norm() == doctest::Approx(side_chain_size(i)));
}

TEST_CASE("role names round trip") {
  for (Role r : {Role::Framework, Role::Antigen, Role::Cdr}) CHECK(role_from_name(role_name(r)) == r);
  CHECK_THROWS(role_from_name("heavy"));
}

TEST_CASE("generated complexes are valid") {
  const ComplexInstance c = test::toy_complex(3, 4, 7);
  CHECK_NOTHROW(c.validate());
  CHECK(c.antigen_count() == 7);
  CHECK(c.cdr_span.length == 4);
  CHECK(c.framework_count() == 2);
  CHECK(c.chain_position(0) == 0);
  CHECK(c.chain_position(1) == 5);
  CHECK((c.anchor_after().x - c.anchor_before().x).norm() == doctest::Approx(10.0));
  CHECK(c.antigen_sites.size() == 7);
}

TEST_CASE("invalid complexes are rejected") {
  ComplexInstance c = test::toy_complex(3);
  auto ctx = c.context;
  CHECK_THROWS_AS(ComplexInstance::make("x", ctx, CdrSpan{0, 3}), DataError);
  CHECK_THROWS_AS(ComplexInstance::make("x", ctx, CdrSpan{1, 0}), DataError);
  ctx.erase(ctx.begin());
  CHECK_THROWS_AS(ComplexInstance::make("x", ctx, CdrSpan{1, 3}), DataError);
}

TEST_CASE("side chain uses the residue frame") {
  ResidueState r;
  r.aa = aa_index('W');
  r.x = Vec3(1, 2, 3);
  r.orient = exp_map({Vec3(0, 0, 1.0)});
  CHECK((r.side_chain() - (r.x + r.orient.matrix() * side_chain_offset(r.aa))).norm() < 1e-15);
}

TEST_CASE("rigid motions compose and invert") {
  Rng r(4);
  const RigidMotion g = test::random_motion(r);
  const Vec3 x(0.3, -1, 2);
  CHECK((g.inverse().apply(g.apply(x)) - x).norm() < 1e-12);
  const ComplexInstance c = test::toy_complex(5);
  const ComplexInstance back = apply_rigid(apply_rigid(c, g), g.inverse());
  for (std::size_t i = 0; i < c.context.size(); ++i) {
    CHECK((back.context[i].state.x - c.context[i].state.x).norm() < 1e-10);
    CHECK(geodesic_angle(back.context[i].state.orient, c.context[i].state.orient) < 1e-10);
  }
  for (std::size_t i = 0; i < c.antigen_sites.size(); ++i)
    CHECK((apply_rigid(c, g).antigen_sites[i].sc - g.apply(c.antigen_sites[i].sc)).norm() < 1e-10);
}

TEST_CASE("complex frame is equivariant") {
  Rng r(6);
  const ComplexInstance c = test::toy_complex(7);
  const ComplexFrame f = complex_frame(c);
  CHECK(f.axes.is_valid(1e-12));
  CHECK((f.origin - 0.5 * (c.anchor_before().x + c.anchor_after().x)).norm() < 1e-12);
  for (int k = 0; k < 5; ++k) {
    const RigidMotion g = test::random_motion(r);
    const ComplexFrame fg = complex_frame(apply_rigid(c, g));
    CHECK((fg.origin - g.apply(f.origin)).norm() < 1e-9);
    CHECK(geodesic_angle(fg.axes, g.rot * f.axes) < 1e-9);
    const Vec3 p(4, -2, 7);
    CHECK((fg.to_local(g.apply(p)) - f.to_local(p)).norm() < 1e-9);
  }
}

TEST_CASE("physical CDR check") {
  CdrState s;
  s.residues.resize(3);
  s.residues[1].x = Vec3(3.8, 0, 0);
  s.residues[2].x = Vec3(7.6, 0, 0);
  CHECK(s.is_physical());
  s.residues[2].x = Vec3(3.9, 0, 0);
  CHECK_FALSE(s.is_physical());
}
