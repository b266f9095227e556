#include "abd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <fmt/format.h>
#include <json.hpp>

#include "abd/errors.hpp"

namespace abd {

using nlohmann::json;

void GenParams::validate() const {
  if (n_antigen_res < 1) throw ConfigError("data.n_antigen_res must be >= 1");
  if (cdr_len < 1) throw ConfigError("data.cdr_len must be >= 1");
  if (!(anchor_gap > 0.0)) throw ConfigError("data.anchor_gap must be positive");
  if (!(box_scale > 0.0)) throw ConfigError("data.box_scale must be positive");
}

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    for (int i = 0; i < 3; ++i) v[i] = rng.normal();
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Rotation random_rotation(Rng& rng) {
  double q[4];
  double n = 0.0;
  do {
    n = 0.0;
    for (double& x : q) {
      x = rng.normal();
      n += x * x;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return nearest_rotation(m);
}

// Rotation whose second axis (the side-chain direction) is `dir`, with a
// random spin about it.
Rotation facing(const Vec3& dir, Rng& rng) {
  const Vec3 e2 = dir.normalized();
  Vec3 e1 = random_unit(rng);
  e1 -= e1.dot(e2) * e2;
  if (e1.norm() < 1e-6) {
    e1 = e2.unitOrthogonal();
  }
  e1.normalize();
  const Vec3 e3 = e1.cross(e2);
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = e3;
  return Rotation::from_matrix(m, 1e-9);
}

std::vector<const ResidueState*> chain_flank(const ComplexInstance& c) {
  return {&c.anchor_before(), &c.anchor_after()};
}

}  // namespace

ComplexInstance gen_complex(const GenParams& p) {
  p.validate();
  Rng rng(p.seed);
  const double radius = 0.7 * p.box_scale;
  const double cap = 55.0 * std::numbers::pi / 180.0;
  const double min_sep = 4.0;

  std::vector<Vec3> sites;
  for (int attempt = 0; static_cast<int>(sites.size()) < p.n_antigen_res; ++attempt) {
    // Relax the spacing if the cap is crowded.
    const double sep = min_sep * std::pow(0.9, attempt / 2000);
    const double cz = 1.0 - rng.uniform() * (1.0 - std::cos(cap));
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    const double r = radius + 0.5 * rng.normal();
    const Vec3 x = r * Vec3(sz * std::cos(phi), sz * std::sin(phi), cz);
    bool ok = true;
    for (const auto& s : sites) ok = ok && (s - x).norm() > std::max(sep, 1.6);
    if (ok) sites.push_back(x);
  }

  std::vector<ContextResidue> antigen;
  Vec3 centroid = Vec3::Zero();
  for (const auto& x : sites) {
    const int aa = static_cast<int>(rng.index(kNumAminoAcids));
    antigen.push_back({Role::Antigen, {aa, x, facing(x, rng)}});
    centroid += x;
  }
  centroid /= static_cast<double>(sites.size());

  const Vec3 up = centroid.normalized();
  const Vec3 mid = centroid + p.box_scale * (0.9 + 0.2 * rng.uniform()) * up;
  Vec3 across = random_unit(rng);
  across -= across.dot(up) * up;
  if (across.norm() < 1e-6) across = up.unitOrthogonal();
  across.normalize();

  std::vector<ContextResidue> context;
  for (int k = 0; k < 2; ++k) {
    const Vec3 x = mid + (k == 0 ? -0.5 : 0.5) * p.anchor_gap * across;
    const int aa = static_cast<int>(rng.index(kNumAminoAcids));
    context.push_back({Role::Framework, {aa, x, facing(-up, rng)}});
  }
  context.insert(context.end(), antigen.begin(), antigen.end());
  const std::string id = fmt::format("cx-{:08x}", splitmix64(p.seed) & 0xffffffffULL);
  return ComplexInstance::make(id, std::move(context), CdrSpan{1, p.cdr_len});
}

double anneal_objective(const ComplexInstance& complex, const CdrState& cdr, const EnergyParams& ep, double bond) {
  const EnergyReport e = cdr_ag_energies(complex, cdr, ep);
  const auto flank = chain_flank(complex);
  double pen = 0.0;
  const Vec3* prev = &flank[0]->x;
  for (const auto& r : cdr.residues) {
    const double d = (r.x - *prev).norm() - bond;
    pen += d * d;
    prev = &r.x;
  }
  const double d = (flank[1]->x - *prev).norm() - bond;
  pen += d * d;
  return e.e_intra + e.dg_proxy + pen;
}

CdrState random_cdr(const ComplexInstance& complex, Rng& rng) {
  const int m = complex.cdr_span.length;
  const Vec3 a = complex.anchor_before().x;
  const Vec3 b = complex.anchor_after().x;
  Vec3 centroid = Vec3::Zero();
  for (const auto& s : complex.antigen_sites) centroid += s.bb;
  centroid /= static_cast<double>(complex.antigen_sites.size());
  const Vec3 mid = 0.5 * (a + b);
  Vec3 down = centroid - mid;
  down -= down.dot((b - a).normalized()) * (b - a).normalized();
  down.normalize();
  const double sag = 0.35 * 3.8 * m;
  CdrState cdr;
  for (int i = 0; i < m; ++i) {
    const double f = (i + 1.0) / (m + 1.0);
    Vec3 x = a + f * (b - a) + sag * std::sin(std::numbers::pi * f) * down;
    for (int k = 0; k < 3; ++k) x[k] += 0.5 * rng.normal();
    cdr.residues.push_back({static_cast<int>(rng.index(kNumAminoAcids)), x, random_rotation(rng)});
  }
  return cdr;
}

Design gen_reference_cdr(const ComplexInstance& complex, std::uint64_t seed, const AnnealParams& ap,
                         const EnergyParams& ep) {
  if (ap.steps < 0) throw ConfigError("anneal steps must be >= 0");
  Rng rng(seed);
  CdrState cur = random_cdr(complex, rng);
  double f_cur = anneal_objective(complex, cur, ep, ap.bond);
  CdrState best = cur;
  double f_best = f_cur;
  const int m = cur.size();
  const double decay = ap.steps > 1 ? std::pow(ap.temp_end / ap.temp_start, 1.0 / (ap.steps - 1)) : 1.0;
  double temp = ap.temp_start;
  for (int step = 0; step < ap.steps; ++step, temp *= decay) {
    CdrState prop = cur;
    auto& r = prop.residues[rng.index(m)];
    switch (rng.index(3)) {
      case 0:
        r.aa = static_cast<int>(rng.index(kNumAminoAcids));
        break;
      case 1:
        for (int k = 0; k < 3; ++k) r.x[k] += ap.coord_jitter * rng.normal();
        break;
      default: {
        Vec3 w;
        for (int k = 0; k < 3; ++k) w[k] = ap.rot_jitter * rng.normal();
        r.orient = nearest_rotation((r.orient * exp_map(AxisAngle{w})).matrix());
      }
    }
    const double f = anneal_objective(complex, prop, ep, ap.bond);
    if (f <= f_cur || rng.uniform() < std::exp(-(f - f_cur) / temp)) {
      cur = std::move(prop);
      f_cur = f;
      if (f_cur < f_best) {
        best = cur;
        f_best = f_cur;
      }
    }
  }
  Design d{complex.id, best, cdr_ag_energies(complex, best, ep), seed};
  return d;
}

// ---------------------------------------------------------------- JSON

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) throw NumericError("refusing to serialize a non-finite value");
  return fmt::format("{:.17g}", v);
}

std::string residue_json(Role role, const ResidueState& r) {
  const auto o = r.orient.row_major();
  std::string s = fmt::format(R"({{"role":"{}","aa":"{}","x":[{},{},{}],"orient":[)", role_name(role),
                              aa_letter(r.aa), num(r.x[0]), num(r.x[1]), num(r.x[2]));
  for (int k = 0; k < 9; ++k) s += (k ? "," : "") + num(o[k]);
  return s + "]}";
}

std::string array_json(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
  return s + "]";
}

std::string energies_json(const EnergyReport& e) {
  return fmt::format(
      R"({{"e_att_per_res":{},"e_rep_per_res":{},"e_att_total":{},"e_rep_total":{},"e_intra":{},"dg_proxy":{}}})",
      array_json(e.e_att_per_res), array_json(e.e_rep_per_res), num(e.e_att_total), num(e.e_rep_total),
      num(e.e_intra), num(e.dg_proxy));
}

std::string quote(const std::string& s) { return json(s).dump(); }

[[noreturn]] void fail(int line, const std::string& field, const std::string& what) {
  throw DataError(fmt::format("line {}: field '{}': {}", line, field, what));
}

const json& field(const json& j, const char* name, int line, const std::string& ctx = {}) {
  const std::string path = ctx.empty() ? name : ctx + "." + name;
  if (!j.is_object()) fail(line, ctx.empty() ? "<root>" : ctx, "expected an object");
  auto it = j.find(name);
  if (it == j.end()) fail(line, path, "missing");
  return *it;
}

double as_num(const json& j, int line, const std::string& path) {
  if (!j.is_number()) fail(line, path, "expected a number");
  return j.get<double>();
}

std::vector<double> as_nums(const json& j, int line, const std::string& path, std::size_t n = 0) {
  if (!j.is_array()) fail(line, path, "expected an array");
  if (n && j.size() != n) fail(line, path, fmt::format("expected {} numbers, got {}", n, j.size()));
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(as_num(j[i], line, fmt::format("{}[{}]", path, i)));
  return v;
}

json parse_line(const std::string& line, int line_no) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("line {}: field '<root>': malformed JSON ({})", line_no, e.what()));
  }
}

std::pair<Role, ResidueState> residue_from(const json& j, int line, const std::string& path) {
  const auto& role_j = field(j, "role", line, path);
  if (!role_j.is_string()) fail(line, path + ".role", "expected a string");
  Role role;
  try {
    role = role_from_name(role_j.get<std::string>());
  } catch (const std::exception& e) {
    fail(line, path + ".role", e.what());
  }
  const auto& aa_j = field(j, "aa", line, path);
  if (!aa_j.is_string() || aa_j.get<std::string>().size() != 1) fail(line, path + ".aa", "expected a one-letter code");
  ResidueState r;
  try {
    r.aa = aa_index(aa_j.get<std::string>()[0]);
  } catch (const std::exception& e) {
    fail(line, path + ".aa", e.what());
  }
  const auto x = as_nums(field(j, "x", line, path), line, path + ".x", 3);
  r.x = Vec3(x[0], x[1], x[2]);
  const auto o = as_nums(field(j, "orient", line, path), line, path + ".orient", 9);
  std::array<double, 9> a;
  std::copy(o.begin(), o.end(), a.begin());
  try {
    r.orient = Rotation::from_row_major(a, 1e-6);
  } catch (const std::exception& e) {
    fail(line, path + ".orient", e.what());
  }
  return {role, r};
}

CdrSpan span_from(const json& j, int line) {
  const auto v = as_nums(field(j, "cdr_span", line), line, "cdr_span", 2);
  if (v[0] != std::floor(v[0]) || v[1] != std::floor(v[1]) || v[0] < 0 || v[1] < 1)
    fail(line, "cdr_span", "expected [l, m] with l >= 0 and m >= 1");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

std::string id_from(const json& j, int line) {
  const auto& id = field(j, "id", line);
  if (!id.is_string() || id.get<std::string>().empty()) fail(line, "id", "expected a non-empty string");
  return id.get<std::string>();
}

EnergyReport energies_from(const json& j, int line) {
  EnergyReport e;
  e.e_att_per_res = as_nums(field(j, "e_att_per_res", line, "energies"), line, "energies.e_att_per_res");
  e.e_rep_per_res = as_nums(field(j, "e_rep_per_res", line, "energies"), line, "energies.e_rep_per_res");
  e.e_att_total = as_num(field(j, "e_att_total", line, "energies"), line, "energies.e_att_total");
  e.e_rep_total = as_num(field(j, "e_rep_total", line, "energies"), line, "energies.e_rep_total");
  e.e_intra = as_num(field(j, "e_intra", line, "energies"), line, "energies.e_intra");
  e.dg_proxy = as_num(field(j, "dg_proxy", line, "energies"), line, "energies.dg_proxy");
  return e;
}

std::uint64_t seed_from(const json& j, int line) {
  auto it = j.find("seed");
  if (it == j.end()) return 0;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
    fail(line, "seed", "expected a nonnegative integer");
  return it->get<std::uint64_t>();
}

}  // namespace

std::string entry_to_json(const DatasetEntry& e, const std::string& config_hash) {
  const auto& c = e.complex;
  const int l = c.cdr_span.start;
  std::string res;
  auto push = [&](const std::string& s) { res += (res.empty() ? "" : ",") + s; };
  int fw = 0;
  for (const auto& r : c.context) {
    if (r.role != Role::Framework) continue;
    if (fw == l && e.reference)
      for (const auto& cr : e.reference->cdr.residues) push(residue_json(Role::Cdr, cr));
    push(residue_json(Role::Framework, r.state));
    ++fw;
  }
  if (fw <= l && e.reference)
    for (const auto& cr : e.reference->cdr.residues) push(residue_json(Role::Cdr, cr));
  for (const auto& r : c.context)
    if (r.role == Role::Antigen) push(residue_json(Role::Antigen, r.state));
  std::string s = fmt::format(R"({{"id":{},"residues":[{}],"cdr_span":[{},{}])", quote(c.id), res, l, c.cdr_span.length);
  if (e.reference) {
    s += fmt::format(R"(,"seed":{})", e.reference->seed);
    if (e.reference->energies) s += R"(,"energies":)" + energies_json(*e.reference->energies);
  }
  if (!config_hash.empty()) s += R"(,"config_hash":)" + quote(config_hash);
  return s + "}";
}

DatasetEntry entry_from_json(const std::string& line, int line_no) {
  const json j = parse_line(line, line_no);
  const std::string id = id_from(j, line_no);
  const CdrSpan span = span_from(j, line_no);
  const auto& res = field(j, "residues", line_no);
  if (!res.is_array()) fail(line_no, "residues", "expected an array");
  std::vector<ContextResidue> context;
  CdrState cdr;
  int chain_pos = 0;
  bool antigen_seen = false;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const std::string path = fmt::format("residues[{}]", i);
    auto [role, r] = residue_from(res[i], line_no, path);
    if (role == Role::Antigen) {
      antigen_seen = true;
    } else {
      if (antigen_seen) fail(line_no, path, "chain residue after antigen residues");
      const bool in_span = chain_pos >= span.start && chain_pos < span.start + span.length;
      if (role == Role::Cdr && !in_span) fail(line_no, path + ".role", "CDR residue outside cdr_span");
      if (role == Role::Framework && in_span && !cdr.residues.empty())
        fail(line_no, path + ".role", "framework residue inside cdr_span");
      if (role == Role::Framework && in_span && cdr.residues.empty()) chain_pos += span.length;
      ++chain_pos;
    }
    if (role == Role::Cdr)
      cdr.residues.push_back(r);
    else
      context.push_back({role, r});
  }
  if (!cdr.residues.empty() && cdr.size() != span.length)
    fail(line_no, "residues", fmt::format("{} CDR residues for a span of {}", cdr.size(), span.length));
  DatasetEntry e;
  try {
    e.complex = ComplexInstance::make(id, std::move(context), span);
  } catch (const DataError& err) {
    fail(line_no, "residues", err.what());
  }
  if (!cdr.residues.empty()) {
    Design d{id, std::move(cdr), std::nullopt, seed_from(j, line_no)};
    if (j.contains("energies")) d.energies = energies_from(j["energies"], line_no);
    e.reference = std::move(d);
  }
  return e;
}

void write_dataset(std::ostream& os, const std::vector<DatasetEntry>& entries, const std::string& config_hash) {
  for (const auto& e : entries) os << entry_to_json(e, config_hash) << '\n';
}

std::vector<DatasetEntry> read_dataset(std::istream& is) {
  std::vector<DatasetEntry> out;
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    out.push_back(entry_from_json(line, n));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<DatasetEntry>& entries, const std::string& config_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(fmt::format("cannot write {}", path));
  write_dataset(os, entries, config_hash);
}

std::vector<DatasetEntry> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("cannot read dataset {}", path));
  return read_dataset(is);
}

std::string design_to_json(const Design& d, const CdrSpan& span, const std::string& config_hash) {
  std::string res;
  for (const auto& r : d.cdr.residues) res += (res.empty() ? "" : ",") + residue_json(Role::Cdr, r);
  std::string s = fmt::format(R"({{"id":{},"residues":[{}],"cdr_span":[{},{}],"seed":{})", quote(d.complex_id), res,
                              span.start, span.length, d.seed);
  if (d.energies) s += R"(,"energies":)" + energies_json(*d.energies);
  if (!config_hash.empty()) s += R"(,"config_hash":)" + quote(config_hash);
  return s + "}";
}

Design design_from_json(const std::string& line, int line_no) {
  const json j = parse_line(line, line_no);
  Design d;
  d.complex_id = id_from(j, line_no);
  const CdrSpan span = span_from(j, line_no);
  const auto& res = field(j, "residues", line_no);
  if (!res.is_array()) fail(line_no, "residues", "expected an array");
  for (std::size_t i = 0; i < res.size(); ++i) {
    const std::string path = fmt::format("residues[{}]", i);
    auto [role, r] = residue_from(res[i], line_no, path);
    if (role != Role::Cdr) fail(line_no, path + ".role", "designs hold CDR residues only");
    d.cdr.residues.push_back(r);
  }
  if (d.cdr.size() != span.length)
    fail(line_no, "residues", fmt::format("{} residues for a span of {}", d.cdr.size(), span.length));
  d.seed = seed_from(j, line_no);
  if (j.contains("energies")) d.energies = energies_from(j["energies"], line_no);
  return d;
}

void write_designs(std::ostream& os, const std::vector<Design>& designs, const std::vector<CdrSpan>& spans,
                   const std::string& config_hash) {
  if (spans.size() != designs.size()) throw DomainError("write_designs: one span per design required");
  for (std::size_t i = 0; i < designs.size(); ++i) os << design_to_json(designs[i], spans[i], config_hash) << '\n';
}

std::vector<Design> read_designs(std::istream& is) {
  std::vector<Design> out;
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    out.push_back(design_from_json(line, n));
  }
  return out;
}

std::vector<Design> read_designs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("cannot read designs {}", path));
  return read_designs(is);
}

SplitManifest split_by_hash(const std::vector<std::string>& ids) {
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end(), [](const std::string& a, const std::string& b) {
    const auto ha = fnv1a64(a), hb = fnv1a64(b);
    return ha != hb ? ha < hb : a < b;
  });
  const std::size_t n = sorted.size();
  const std::size_t k = n >= 3 ? std::max<std::size_t>(1, n / 6) : 0;
  SplitManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < k ? m.test : i < 2 * k ? m.val : m.train;
    dst.push_back(sorted[i]);
  }
  return m;
}

std::string manifest_to_json(const SplitManifest& m, const std::string& config_hash) {
  json j;
  j["train"] = m.train;
  j["val"] = m.val;
  j["test"] = m.test;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

SplitManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("split manifest: malformed JSON ({})", e.what()));
  }
  SplitManifest m;
  for (auto [name, dst] : {std::pair{"train", &m.train}, std::pair{"val", &m.val}, std::pair{"test", &m.test}}) {
    if (!j.contains(name) || !j[name].is_array()) throw DataError(fmt::format("split manifest: field '{}' missing", name));
    for (const auto& id : j[name]) {
      if (!id.is_string()) throw DataError(fmt::format("split manifest: field '{}' holds a non-string id", name));
      dst->push_back(id.get<std::string>());
    }
  }
  return m;
}

}  // namespace abd
