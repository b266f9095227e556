#include "abd/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {

double sequence_entropy(const std::vector<Design>& designs) {
  std::array<long, kNumAminoAcids> counts{};
  long total = 0;
  for (const auto& d : designs)
    for (const auto& r : d.cdr.residues) {
      ++counts.at(r.aa);
      ++total;
    }
  if (total == 0) throw DomainError("sequence_entropy: no residues");
  double h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

double energy_gap(const EnergyReport& d, const EnergyReport& r) {
  return (std::abs(d.e_intra - r.e_intra) + std::abs(d.dg_proxy - r.dg_proxy) + std::abs(d.e_att_total - r.e_att_total) +
          std::abs(d.e_rep_total - r.e_rep_total)) /
         4.0;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::size_t rank_top_index(const std::vector<Design>& designs) {
  if (designs.empty()) throw DomainError("rank_top: no designs");
  std::vector<double> intra, dg;
  for (const auto& d : designs) {
    if (!d.energies) throw DomainError(fmt::format("rank_top: design {} has no energies", d.seed));
    intra.push_back(d.energies->e_intra);
    dg.push_back(d.energies->dg_proxy);
  }
  const auto ri = average_ranks(intra);
  const auto rd = average_ranks(dg);
  std::size_t best = 0;
  for (std::size_t i = 1; i < designs.size(); ++i) {
    const double si = ri[i] + rd[i], sb = ri[best] + rd[best];
    if (si < sb || (si == sb && (dg[i] < dg[best] || (dg[i] == dg[best] && designs[i].seed < designs[best].seed))))
      best = i;
  }
  return best;
}

const Design& rank_top(const std::vector<Design>& designs) { return designs[rank_top_index(designs)]; }

std::vector<std::size_t> pareto_front(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
  // Sweep by increasing first coordinate: a point survives iff its second
  // coordinate beats every point strictly before it in (x, y) order, or it
  // duplicates the current frontier point exactly.
  std::vector<char> keep(points.size(), 0);
  double best_y = INFINITY;
  std::pair<double, double> last{NAN, NAN};
  for (std::size_t idx : order) {
    const auto& p = points[idx];
    if (p.second < best_y) {
      keep[idx] = 1;
      best_y = p.second;
      last = p;
    } else if (p == last) {
      keep[idx] = 1;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

MetricRow metric_row(const std::string& label, const std::vector<Design>& designs, const EnergyReport& reference) {
  const Design& top = rank_top(designs);
  MetricRow row;
  row.method_label = label;
  row.complex_id = top.complex_id;
  const EnergyReport& t = *top.energies;
  row.top_e_intra = t.e_intra;
  row.top_dg = t.dg_proxy;
  row.top_e_att = t.e_att_total;
  row.top_e_rep = t.e_rep_total;
  row.top_gap = energy_gap(t, reference);
  const double n = static_cast<double>(designs.size());
  for (const auto& d : designs) {
    const EnergyReport& e = *d.energies;
    row.avg_e_intra += e.e_intra / n;
    row.avg_dg += e.dg_proxy / n;
    row.avg_e_att += e.e_att_total / n;
    row.avg_e_rep += e.e_rep_total / n;
    row.avg_gap += energy_gap(e, reference) / n;
  }
  row.entropy = sequence_entropy(designs);
  return row;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "method_label,complex_id,top_e_intra,avg_e_intra,top_dg,avg_dg,top_e_att,avg_e_att,top_e_rep,avg_e_rep,"
        "top_gap,avg_gap,entropy\n";
  for (const auto& r : rows)
    os << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                      r.method_label, r.complex_id, r.top_e_intra, r.avg_e_intra, r.top_dg, r.avg_dg, r.top_e_att,
                      r.avg_e_att, r.top_e_rep, r.avg_e_rep, r.top_gap, r.avg_gap, r.entropy);
}

}  // namespace abd
