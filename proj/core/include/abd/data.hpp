#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "abd/energy.hpp"
#include "abd/model.hpp"

namespace abd {

struct GenParams {
  int n_antigen_res = 12;
  int cdr_len = 8;
  double anchor_gap = 10.0;  // Angstrom
  double box_scale = 15.0;   // Angstrom
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// Synthetic complex: an antigen epitope on a jittered spherical cap and
/// two framework anchors `anchor_gap` apart facing it, with the CDR span
/// between them. Deterministic per seed.
ComplexInstance gen_complex(const GenParams& p);

struct AnnealParams {
  int steps = 20000;
  double temp_start = 3.0;
  double temp_end = 0.01;
  double coord_jitter = 0.3;  // Angstrom
  double rot_jitter = 0.1;    // radians
  double bond = 3.8;          // ideal C-alpha spacing, Angstrom
};

/// e_intra + dg_proxy + sum over chain bonds (anchors included) of
/// (|x_{i+1} - x_i| - bond)^2.
double anneal_objective(const ComplexInstance& complex, const CdrState& cdr, const EnergyParams& ep = {},
                        double bond = 3.8);

/// Random loop hanging between the anchors toward the antigen.
CdrState random_cdr(const ComplexInstance& complex, Rng& rng);

/// Simulated annealing over types, positions and orientations. Returns the
/// best visited state with its energies.
Design gen_reference_cdr(const ComplexInstance& complex, std::uint64_t seed, const AnnealParams& ap = {},
                         const EnergyParams& ep = {});

/// One complex with its reference CDR when known.
struct DatasetEntry {
  ComplexInstance complex;
  std::optional<Design> reference;
};

/// JSON-lines persistence. Read errors are DataError naming the line
/// number and field.
std::string entry_to_json(const DatasetEntry& e, const std::string& config_hash = {});
DatasetEntry entry_from_json(const std::string& line, int line_no = 1);
void write_dataset(std::ostream& os, const std::vector<DatasetEntry>& entries, const std::string& config_hash = {});
std::vector<DatasetEntry> read_dataset(std::istream& is);
void write_dataset(const std::string& path, const std::vector<DatasetEntry>& entries,
                   const std::string& config_hash = {});
std::vector<DatasetEntry> read_dataset(const std::string& path);

/// Designs carry only their CDR residues plus seed and energies.
std::string design_to_json(const Design& d, const CdrSpan& span, const std::string& config_hash = {});
Design design_from_json(const std::string& line, int line_no = 1);
void write_designs(std::ostream& os, const std::vector<Design>& designs, const std::vector<CdrSpan>& spans,
                   const std::string& config_hash = {});
std::vector<Design> read_designs(std::istream& is);
std::vector<Design> read_designs(const std::string& path);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Orders ids by a 64-bit hash; the first n/6 (at least one when n >= 3)
/// become test, the next n/6 validation, the rest training.
SplitManifest split_by_hash(const std::vector<std::string>& ids);
std::string manifest_to_json(const SplitManifest& m, const std::string& config_hash = {});
SplitManifest manifest_from_json(const std::string& text);

}  // namespace abd
