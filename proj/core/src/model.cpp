#include "abd/model.hpp"

#include <array>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {
namespace {

// Reach of the side-chain proxy per residue type, alphabet order
// A C D E F G H I K L M N P Q R S T V W Y.
constexpr std::array<double, kNumAminoAcids> kSideChainSize = {
    0.8, 1.2, 1.6, 2.0, 2.6, 0.0, 2.3, 1.8, 2.4, 1.8,
    2.1, 1.6, 1.2, 2.0, 2.7, 1.0, 1.3, 1.4, 3.0, 2.9};

}  // namespace

char aa_letter(int aa) {
  if (aa < 0 || aa >= kNumAminoAcids) throw DataError(fmt::format("amino-acid index {} out of range", aa));
  return kAminoAlphabet[aa];
}

int aa_index(char letter) {
  const auto pos = kAminoAlphabet.find(letter);
  if (pos == std::string_view::npos) throw DataError(fmt::format("unknown amino-acid letter '{}'", letter));
  return static_cast<int>(pos);
}

double side_chain_size(int aa) {
  if (aa < 0 || aa >= kNumAminoAcids) throw DataError(fmt::format("amino-acid index {} out of range", aa));
  return kSideChainSize[aa];
}

Vec3 side_chain_offset(int aa) { return Vec3(0.0, side_chain_size(aa), 0.0); }

std::string_view role_name(Role r) {
  switch (r) {
    case Role::Framework: return "framework";
    case Role::Antigen: return "antigen";
    case Role::Cdr: return "cdr";
  }
  return "framework";
}

Role role_from_name(std::string_view name) {
  if (name == "framework") return Role::Framework;
  if (name == "antigen") return Role::Antigen;
  if (name == "cdr") return Role::Cdr;
  throw DataError(fmt::format("unknown residue role '{}'", name));
}

bool CdrState::is_physical() const {
  for (std::size_t i = 1; i < residues.size(); ++i) {
    const double d = (residues[i].x - residues[i - 1].x).norm();
    if (!(d > 0.5 && d < 10.0)) return false;
  }
  return !residues.empty();
}

ComplexInstance ComplexInstance::make(std::string id, std::vector<ContextResidue> context, CdrSpan span) {
  ComplexInstance c;
  c.id = std::move(id);
  c.context = std::move(context);
  c.cdr_span = span;
  for (const auto& r : c.context) {
    if (r.role == Role::Antigen) c.antigen_sites.push_back({r.state.side_chain(), r.state.backbone()});
  }
  c.validate();
  return c;
}

int ComplexInstance::framework_count() const {
  int n = 0;
  for (const auto& r : context) n += r.role == Role::Framework;
  return n;
}

int ComplexInstance::antigen_count() const {
  int n = 0;
  for (const auto& r : context) n += r.role == Role::Antigen;
  return n;
}

int ComplexInstance::chain_position(int framework_index) const {
  return framework_index < cdr_span.start ? framework_index : framework_index + cdr_span.length;
}

const ResidueState& ComplexInstance::anchor_before() const { return context.at(cdr_span.start - 1).state; }
const ResidueState& ComplexInstance::anchor_after() const { return context.at(cdr_span.start).state; }

void ComplexInstance::validate() const {
  if (cdr_span.length < 1) throw DataError(fmt::format("complex {}: CDR length must be >= 1", id));
  if (cdr_span.start < 1) throw DataError(fmt::format("complex {}: CDR must have a framework residue before it", id));
  bool seen_antigen = false;
  for (const auto& r : context) {
    if (r.role == Role::Cdr) throw DataError(fmt::format("complex {}: CDR residue inside the context", id));
    if (r.role == Role::Antigen) seen_antigen = true;
    if (r.role == Role::Framework && seen_antigen)
      throw DataError(fmt::format("complex {}: framework residues must precede antigen residues", id));
    if (r.state.aa < 0 || r.state.aa >= kNumAminoAcids || !r.state.x.allFinite())
      throw DataError(fmt::format("complex {}: invalid residue", id));
  }
  if (!seen_antigen) throw DataError(fmt::format("complex {}: at least one antigen residue required", id));
  if (framework_count() < cdr_span.start + 1)
    throw DataError(fmt::format("complex {}: CDR span needs framework anchors on both sides", id));
  if (static_cast<int>(antigen_sites.size()) != antigen_count())
    throw DataError(fmt::format("complex {}: antigen site count mismatch", id));
}

ResidueState apply_rigid(const ResidueState& r, const RigidMotion& g) {
  return ResidueState{r.aa, g.apply(r.x), g.rot * r.orient};
}

CdrState apply_rigid(const CdrState& cdr, const RigidMotion& g) {
  CdrState out;
  out.residues.reserve(cdr.residues.size());
  for (const auto& r : cdr.residues) out.residues.push_back(apply_rigid(r, g));
  return out;
}

ComplexInstance apply_rigid(const ComplexInstance& c, const RigidMotion& g) {
  ComplexInstance out = c;
  for (auto& r : out.context) r.state = apply_rigid(r.state, g);
  for (auto& s : out.antigen_sites) {
    s.sc = g.apply(s.sc);
    s.bb = g.apply(s.bb);
  }
  return out;
}

Design apply_rigid(const Design& d, const RigidMotion& g) {
  Design out = d;
  out.cdr = apply_rigid(d.cdr, g);
  return out;
}

ComplexFrame complex_frame(const ComplexInstance& c) {
  const Vec3 a = c.anchor_before().x;
  const Vec3 b = c.anchor_after().x;
  Vec3 centroid = Vec3::Zero();
  int n = 0;
  for (const auto& r : c.context) {
    if (r.role == Role::Antigen) {
      centroid += r.state.x;
      ++n;
    }
  }
  centroid /= n;
  ComplexFrame f;
  f.origin = 0.5 * (a + b);
  Vec3 e1 = b - a;
  if (e1.norm() < 1e-9) e1 = Vec3::UnitX();
  e1.normalize();
  Vec3 toward = centroid - f.origin;
  Vec3 e2 = toward - toward.dot(e1) * e1;
  if (e2.norm() < 1e-9) e2 = e1.unitOrthogonal();
  e2.normalize();
  const Vec3 e3 = e1.cross(e2);
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = e3;
  f.axes = Rotation::unchecked(m);
  return f;
}

}  // namespace abd
