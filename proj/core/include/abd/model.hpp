#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "abd/geom.hpp"

namespace abd {

inline constexpr int kNumAminoAcids = 20;
inline constexpr std::string_view kAminoAlphabet = "ACDEFGHIKLMNPQRSTVWY";

char aa_letter(int aa);
/// Index of a one-letter code, throws DataError for anything outside the
/// 20-letter alphabet.
int aa_index(char letter);

/// Side-chain reach in Angstrom: ~0 for G, ~3 for W.
double side_chain_size(int aa);

/// Side-chain proxy offset u(aa) in the residue's local frame.
Vec3 side_chain_offset(int aa);

struct ResidueState {
  int aa = 0;
  Vec3 x = Vec3::Zero();  // C-alpha, Angstrom
  Rotation orient;

  /// Side-chain interaction point, x + orient * u(aa).
  Vec3 side_chain() const { return x + orient * side_chain_offset(aa); }
  /// Backbone interaction point: the C-alpha itself.
  const Vec3& backbone() const { return x; }
};

enum class Role { Framework, Antigen, Cdr };

std::string_view role_name(Role r);
Role role_from_name(std::string_view name);

struct ContextResidue {
  Role role = Role::Framework;
  ResidueState state;
};

/// The two interaction points of one antigen residue.
struct InteractionSite {
  Vec3 sc = Vec3::Zero();
  Vec3 bb = Vec3::Zero();
};

/// Designable span: chain positions [start, start + length) on the antibody
/// chain (0-based; start = l, length = m).
struct CdrSpan {
  int start = 1;
  int length = 1;
  friend bool operator==(const CdrSpan&, const CdrSpan&) = default;
};

struct CdrState {
  std::vector<ResidueState> residues;

  int size() const { return static_cast<int>(residues.size()); }
  /// Consecutive C-alpha distances inside (0.5, 10) Angstrom.
  bool is_physical() const;
};

/// Conditioning context: antibody framework chain plus antigen, with one
/// designable CDR span.
///
/// `context` holds the framework chain residues in chain order (skipping
/// the CDR positions) followed by the antigen residues. Framework entry i
/// sits at chain position i when i < l and i + m otherwise.
struct ComplexInstance {
  std::string id;
  std::vector<ContextResidue> context;
  std::vector<InteractionSite> antigen_sites;  // one per antigen residue, same order
  CdrSpan cdr_span;

  /// Builds a complex and derives antigen interaction sites from residue
  /// frames. Throws DataError on invariant violations.
  static ComplexInstance make(std::string id, std::vector<ContextResidue> context, CdrSpan span);

  void validate() const;

  int framework_count() const;
  int antigen_count() const;
  /// Chain position of framework entry i.
  int chain_position(int framework_index) const;
  /// Framework residues flanking the CDR (chain positions l-1 and l+m).
  const ResidueState& anchor_before() const;
  const ResidueState& anchor_after() const;
};

struct EnergyReport {
  std::vector<double> e_att_per_res;  // <= 0
  std::vector<double> e_rep_per_res;  // >= 0
  double e_att_total = 0.0;
  double e_rep_total = 0.0;
  double e_intra = 0.0;   // CDR-internal total energy proxy
  double dg_proxy = 0.0;  // e_att_total + e_rep_total
};

struct Design {
  std::string complex_id;
  CdrState cdr;
  std::optional<EnergyReport> energies;
  std::uint64_t seed = 0;
};

struct RigidMotion {
  Rotation rot;
  Vec3 shift = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rot * x + shift; }
  RigidMotion inverse() const { return {rot.transpose(), -(rot.transpose() * shift)}; }
};

ResidueState apply_rigid(const ResidueState& r, const RigidMotion& g);
CdrState apply_rigid(const CdrState& cdr, const RigidMotion& g);
ComplexInstance apply_rigid(const ComplexInstance& c, const RigidMotion& g);
Design apply_rigid(const Design& d, const RigidMotion& g);

/// Canonical rigid frame of a complex: origin at the anchor midpoint, first
/// axis along the anchor-to-anchor direction, second axis toward the
/// antigen centroid. Equivariant: frame(g * c) = g * frame(c).
struct ComplexFrame {
  Rotation axes;
  Vec3 origin = Vec3::Zero();

  Vec3 to_local(const Vec3& x) const { return axes.transpose() * (x - origin); }
  Vec3 to_global(const Vec3& u) const { return axes * u + origin; }
  Rotation to_local(const Rotation& o) const { return axes.transpose() * o; }
  Rotation to_global(const Rotation& o) const { return axes * o; }
};

ComplexFrame complex_frame(const ComplexInstance& c);

}  // namespace abd
