#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "abd/model.hpp"

namespace abd {

/// Pooled type entropy in bits over all positions of all designs.
double sequence_entropy(const std::vector<Design>& designs);

/// Mean absolute difference over e_intra, dg_proxy, e_att_total, e_rep_total.
double energy_gap(const EnergyReport& design, const EnergyReport& reference);

/// 1-based ascending ranks, ties share their average rank.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Index of the design with the smallest rank sum over e_intra and
/// dg_proxy; ties go to lower dg_proxy, then lower seed. Every design
/// needs energies (DomainError otherwise).
std::size_t rank_top_index(const std::vector<Design>& designs);
const Design& rank_top(const std::vector<Design>& designs);

/// Indices of the points not dominated under minimization of both
/// coordinates, in input order.
std::vector<std::size_t> pareto_front(const std::vector<std::pair<double, double>>& points);

struct MetricRow {
  std::string method_label;
  std::string complex_id;
  double top_e_intra = 0.0, avg_e_intra = 0.0;
  double top_dg = 0.0, avg_dg = 0.0;
  double top_e_att = 0.0, avg_e_att = 0.0;
  double top_e_rep = 0.0, avg_e_rep = 0.0;
  double top_gap = 0.0, avg_gap = 0.0;
  double entropy = 0.0;
};

/// Top-1 and average metrics of one complex's designs against its reference.
MetricRow metric_row(const std::string& label, const std::vector<Design>& designs, const EnergyReport& reference);

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);

}  // namespace abd
