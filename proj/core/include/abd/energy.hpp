#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "abd/model.hpp"

namespace abd {

/// Lennard-Jones split with a capped core and a smooth switch to zero
/// between `switch_on` and `cutoff`.
struct EnergyParams {
  double sigma = 4.0;
  double rep_cap = 100.0;
  double att_cap = 1.0;
  double switch_on = 10.0;
  double cutoff = 12.0;
};

struct PairEnergy {
  double att = 0.0;  // <= 0
  double rep = 0.0;  // >= 0
};

/// Throws DomainError for d <= 0.
PairEnergy pair_potential(double d, const EnergyParams& p = {});

/// CDR-antigen attraction/repulsion per CDR residue plus the CDR-internal
/// energy over side-chain pairs at least two apart in sequence.
EnergyReport cdr_ag_energies(const ComplexInstance& complex, const CdrState& cdr, const EnergyParams& p = {});

struct RewardVector {
  double r_att = 0.0;
  double r_rep = 0.0;
};

RewardVector rewards(const EnergyReport& report);

/// Objective weights (att, rep); nonnegative and summing to one.
struct Weights {
  double att = 0.25;
  double rep = 0.75;

  void validate() const;  // throws ConfigError
  /// Parses "a:b" ratios such as "1:3" and normalizes them.
  static Weights parse(std::string_view ratio);
  std::string label() const;
};

double collective_reward(const RewardVector& r, const Weights& w);

/// ln(max(rhat_w - rhat_l, 1e-6)); throws OrderingError unless rhat_w > rhat_l.
double reward_margin(double rhat_w, double rhat_l);
/// Same clamp-and-log applied to an already formed positive difference.
double reward_margin_from_diff(double diff);

struct EnergyRow {
  std::string complex_id;
  std::uint64_t design_seed = 0;
  EnergyReport report;
};

void write_energy_csv(std::ostream& os, const std::vector<EnergyRow>& rows, const Weights& w);

}  // namespace abd
