#include <doctest.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "abd/data.hpp"
#include "abd/errors.hpp"
#include "support.hpp"

using namespace abd;

namespace {

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same_state(const ResidueState& a, const ResidueState& b) {
  if (a.aa != b.aa) return false;
  for (int k = 0; k < 3; ++k)
    if (!same_bits(a.x[k], b.x[k])) return false;
  const auto ra = a.orient.row_major(), rb = b.orient.row_major();
  for (int k = 0; k < 9; ++k)
    if (!same_bits(ra[k], rb[k])) return false;
  return true;
}

bool same_entry(const DatasetEntry& a, const DatasetEntry& b) {
  if (a.complex.id != b.complex.id || !(a.complex.cdr_span == b.complex.cdr_span)) return false;
  if (a.complex.context.size() != b.complex.context.size()) return false;
  for (std::size_t i = 0; i < a.complex.context.size(); ++i)
    if (a.complex.context[i].role != b.complex.context[i].role ||
        !same_state(a.complex.context[i].state, b.complex.context[i].state))
      return false;
  if (a.reference.has_value() != b.reference.has_value()) return false;
  if (!a.reference) return true;
  if (a.reference->seed != b.reference->seed || a.reference->cdr.size() != b.reference->cdr.size()) return false;
  for (int i = 0; i < a.reference->cdr.size(); ++i)
    if (!same_state(a.reference->cdr.residues[i], b.reference->cdr.residues[i])) return false;
  return true;
}

std::vector<DatasetEntry> small_dataset(int n) {
  std::vector<DatasetEntry> out;
  AnnealParams ap;
  ap.steps = 200;
  for (int k = 0; k < n; ++k) {
    const ComplexInstance c = test::toy_complex(300 + k, 4, 8);
    out.push_back({c, gen_reference_cdr(c, 300 + k, ap)});
  }
  return out;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  GenParams p;
  p.seed = 5;
  const ComplexInstance a = gen_complex(p), b = gen_complex(p);
  CHECK(same_entry({a, std::nullopt}, {b, std::nullopt}));
  p.seed = 6;
  CHECK(gen_complex(p).id != a.id);
}

TEST_CASE("generated geometry") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GenParams p;
    p.seed = seed;
    const ComplexInstance c = gen_complex(p);
    Vec3 centroid = Vec3::Zero();
    std::vector<Vec3> ag;
    for (const auto& r : c.context)
      if (r.role == Role::Antigen) ag.push_back(r.state.x);
    for (const auto& x : ag) centroid += x;
    centroid /= static_cast<double>(ag.size());
    const double d = (centroid - 0.5 * (c.anchor_before().x + c.anchor_after().x)).norm();
    CHECK(d >= 0.5 * p.box_scale);
    CHECK(d <= 1.5 * p.box_scale);
    double dmin = 1e9;
    for (std::size_t i = 0; i < ag.size(); ++i)
      for (std::size_t j = i + 1; j < ag.size(); ++j) dmin = std::min(dmin, (ag[i] - ag[j]).norm());
    CHECK(dmin > 1.5);
    CHECK((c.anchor_after().x - c.anchor_before().x).norm() == doctest::Approx(p.anchor_gap));
    CHECK(c.antigen_count() == p.n_antigen_res);
  }
}

TEST_CASE("invalid generation parameters") {
  GenParams p;
  p.cdr_len = 0;
  CHECK_THROWS_AS(gen_complex(p), ConfigError);
  p = {};
  p.box_scale = -1;
  CHECK_THROWS_AS(gen_complex(p), ConfigError);
}

TEST_CASE("annealing bookkeeping") {
  const ComplexInstance c = test::toy_complex(310, 5, 8);
  AnnealParams none;
  none.steps = 0;
  Rng r(77);
  const CdrState init = random_cdr(c, r);
  const Design d0 = gen_reference_cdr(c, 77, none);
  for (int i = 0; i < init.size(); ++i) CHECK(same_state(d0.cdr.residues[i], init.residues[i]));
  AnnealParams some;
  some.steps = 3000;
  const Design d1 = gen_reference_cdr(c, 77, some);
  CHECK(anneal_objective(c, d1.cdr) <= anneal_objective(c, init));
  REQUIRE(d1.energies.has_value());
  CHECK(d1.energies->dg_proxy == cdr_ag_energies(c, d1.cdr).dg_proxy);
  CHECK(d1.cdr.is_physical());
}

TEST_CASE("annealed references bind") {
  int negative = 0;
  for (std::uint64_t seed = 1000; seed < 1020; ++seed) {
    GenParams p;
    p.seed = seed;
    const ComplexInstance c = gen_complex(p);
    const Design d = gen_reference_cdr(c, seed);
    negative += d.energies->dg_proxy < 0.0;
  }
  CHECK(negative >= 18);
}

TEST_CASE("dataset round trip is bit-exact") {
  const auto entries = small_dataset(10);
  std::stringstream ss;
  write_dataset(ss, entries, "abc123");
  const std::string text = ss.str();
  const auto back = read_dataset(ss);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) CHECK(same_entry(entries[i], back[i]));
  std::stringstream again;
  write_dataset(again, back, "abc123");
  CHECK(again.str() == text);
  CHECK(text.find("abc123") != std::string::npos);
}

TEST_CASE("awkward doubles survive the round trip") {
  auto entries = small_dataset(1);
  auto& x = entries[0].reference->cdr.residues[0].x;
  x = Vec3(0.1 + 0.2, -1e-310, 123456789.123456789);
  std::stringstream ss;
  write_dataset(ss, entries);
  const auto back = read_dataset(ss);
  for (int k = 0; k < 3; ++k) CHECK(same_bits(back[0].reference->cdr.residues[0].x[k], x[k]));
}

TEST_CASE("file round trip") {
  const auto entries = small_dataset(3);
  const auto path = std::filesystem::temp_directory_path() / "abd_test_dataset.jsonl";
  write_dataset(path.string(), entries);
  const auto back = read_dataset(path.string());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same_entry(entries[i], back[i]));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_dataset(path.string()), DataError);
}

TEST_CASE("truncated file names the broken line") {
  const auto entries = small_dataset(4);
  std::stringstream ss;
  write_dataset(ss, entries);
  std::string text = ss.str();
  std::size_t third = 0;
  for (int k = 0; k < 2; ++k) third = text.find('\n', third) + 1;
  text = text.substr(0, third + (text.find('\n', third) - third) / 2);
  std::istringstream is(text);
  try {
    read_dataset(is);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).rfind("line 3:", 0) == 0);
  }
}

TEST_CASE("malformed fields are reported by name") {
  const auto entries = small_dataset(1);
  const std::string good = entry_to_json(entries[0]);
  auto expect_field = [](const std::string& line, const std::string& field) {
    try {
      entry_from_json(line, 7);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.rfind("line 7:", 0) == 0);
      CHECK(msg.find(field) != std::string::npos);
    }
  };
  auto replaced = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
  };
  expect_field(replaced("\"id\"", "\"idx\""), "id");
  expect_field(replaced("\"aa\":\"", "\"aa\":\"#"), ".aa");
  expect_field(replaced("\"cdr_span\"", "\"span\""), "cdr_span");
}

TEST_CASE("designs round trip") {
  const auto entries = small_dataset(2);
  std::vector<Design> designs{*entries[0].reference, *entries[1].reference};
  std::stringstream ss;
  write_designs(ss, designs, {entries[0].complex.cdr_span, entries[1].complex.cdr_span}, "h");
  const auto back = read_designs(ss);
  REQUIRE(back.size() == 2);
  for (int k = 0; k < 2; ++k) {
    CHECK(back[k].complex_id == designs[k].complex_id);
    CHECK(back[k].seed == designs[k].seed);
    for (int i = 0; i < designs[k].cdr.size(); ++i) CHECK(same_state(back[k].cdr.residues[i], designs[k].cdr.residues[i]));
    REQUIRE(back[k].energies.has_value());
    CHECK(same_bits(back[k].energies->dg_proxy, designs[k].energies->dg_proxy));
  }
  std::stringstream empty;
  CHECK(read_designs(empty).empty());
}

TEST_CASE("hash split") {
  std::vector<std::string> ids;
  for (int k = 0; k < 12; ++k) ids.push_back(gen_complex(GenParams{12, 8, 10, 15, static_cast<std::uint64_t>(k)}).id);
  const SplitManifest m = split_by_hash(ids);
  CHECK(m.train.size() == 8);
  CHECK(m.val.size() == 2);
  CHECK(m.test.size() == 2);
  std::vector<std::string> shuffled(ids.rbegin(), ids.rend());
  const SplitManifest m2 = split_by_hash(shuffled);
  CHECK(m2.train == m.train);
  CHECK(m2.val == m.val);
  CHECK(m2.test == m.test);
  const SplitManifest back = manifest_from_json(manifest_to_json(m, "h"));
  CHECK(back.train == m.train);
  CHECK(back.test == m.test);
  std::set<std::string> all(m.train.begin(), m.train.end());
  all.insert(m.val.begin(), m.val.end());
  all.insert(m.test.begin(), m.test.end());
  CHECK(all.size() == 12);
}
