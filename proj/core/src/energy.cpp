#include "abd/energy.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {
namespace {

constexpr double kMarginFloor = 1e-6;

double switching(double d, const EnergyParams& p) {
  if (d <= p.switch_on) return 1.0;
  if (d >= p.cutoff) return 0.0;
  const double r2 = d * d;
  const double on2 = p.switch_on * p.switch_on;
  const double off2 = p.cutoff * p.cutoff;
  const double den = off2 - on2;
  return (off2 - r2) * (off2 - r2) * (off2 + 2.0 * r2 - 3.0 * on2) / (den * den * den);
}

// d == 0 is allowed here and yields the capped limits.
PairEnergy pair_energy(double d, const EnergyParams& p) {
  if (d >= p.cutoff) return {};
  if (d <= 0.0) return {-p.att_cap, p.rep_cap};
  const double s6 = std::pow(p.sigma / d, 6);
  const double sw = switching(d, p);
  return {-std::min(s6, p.att_cap) * sw, std::min(s6 * s6, p.rep_cap) * sw};
}

}  // namespace

PairEnergy pair_potential(double d, const EnergyParams& p) {
  if (!(d > 0.0)) throw DomainError(fmt::format("pair_potential: distance must be positive, got {}", d));
  return pair_energy(d, p);
}

EnergyReport cdr_ag_energies(const ComplexInstance& complex, const CdrState& cdr, const EnergyParams& p) {
  const int m = cdr.size();
  EnergyReport rep;
  rep.e_att_per_res.assign(m, 0.0);
  rep.e_rep_per_res.assign(m, 0.0);
  std::vector<Vec3> sc(m);
  for (int j = 0; j < m; ++j) sc[j] = cdr.residues[j].side_chain();
  for (int j = 0; j < m; ++j) {
    const Vec3& bb = cdr.residues[j].backbone();
    double att = 0.0;
    double rp = 0.0;
    for (const auto& site : complex.antigen_sites) {
      const PairEnergy ss = pair_energy((sc[j] - site.sc).norm(), p);
      const PairEnergy sb = pair_energy((sc[j] - site.bb).norm(), p);
      const PairEnergy bs = pair_energy((bb - site.sc).norm(), p);
      const PairEnergy bbp = pair_energy((bb - site.bb).norm(), p);
      att += ss.att + sb.att;
      rp += ss.rep + sb.rep + 2.0 * bs.rep + 2.0 * bbp.rep;
    }
    rep.e_att_per_res[j] = att;
    rep.e_rep_per_res[j] = rp;
    rep.e_att_total += att;
    rep.e_rep_total += rp;
  }
  for (int i = 0; i < m; ++i)
    for (int j = i + 2; j < m; ++j) {
      const PairEnergy e = pair_energy((sc[i] - sc[j]).norm(), p);
      rep.e_intra += e.att + e.rep;
    }
  rep.dg_proxy = rep.e_att_total + rep.e_rep_total;
  return rep;
}

RewardVector rewards(const EnergyReport& report) { return {-report.e_att_total, -report.e_rep_total}; }

void Weights::validate() const {
  if (!(att >= 0.0) || !(rep >= 0.0)) throw ConfigError(fmt::format("weights must be nonnegative, got {}:{}", att, rep));
  if (std::abs(att + rep - 1.0) > 1e-9) throw ConfigError(fmt::format("weights must sum to 1, got {}", att + rep));
}

Weights Weights::parse(std::string_view ratio) {
  const auto colon = ratio.find(':');
  if (colon == std::string_view::npos)
    throw ConfigError(fmt::format("weight '{}': expected a:b at position {}", ratio, ratio.size()));
  auto number = [&](std::size_t begin, std::size_t end) {
    double v = 0.0;
    const char* first = ratio.data() + begin;
    const char* last = ratio.data() + end;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || begin == end || !(v >= 0.0) || !std::isfinite(v))
      throw ConfigError(fmt::format("weight '{}': invalid number at position {}", ratio,
                                    begin + static_cast<std::size_t>(ptr - first)));
    return v;
  };
  const double a = number(0, colon);
  const double b = number(colon + 1, ratio.size());
  if (a + b <= 0.0) throw ConfigError(fmt::format("weight '{}': both parts are zero", ratio));
  Weights w{a / (a + b), b / (a + b)};
  w.rep = 1.0 - w.att;
  return w;
}

std::string Weights::label() const { return fmt::format("{:g}:{:g}", att, rep); }

double collective_reward(const RewardVector& r, const Weights& w) {
  w.validate();
  return w.att * r.r_att + w.rep * r.r_rep;
}

double reward_margin_from_diff(double diff) { return std::log(std::max(diff, kMarginFloor)); }

double reward_margin(double rhat_w, double rhat_l) {
  if (!(rhat_w > rhat_l)) throw OrderingError(fmt::format("reward_margin: winner {} does not beat loser {}", rhat_w, rhat_l));
  return reward_margin_from_diff(rhat_w - rhat_l);
}

void write_energy_csv(std::ostream& os, const std::vector<EnergyRow>& rows, const Weights& w) {
  os << "complex_id,design_seed,e_att,e_rep,e_intra,dg_proxy,r_att,r_rep,r_hat\n";
  for (const auto& row : rows) {
    const RewardVector r = rewards(row.report);
    os << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", row.complex_id,
                      row.design_seed, row.report.e_att_total, row.report.e_rep_total, row.report.e_intra,
                      row.report.dg_proxy, r.r_att, r.r_rep, collective_reward(r, w));
  }
}

}  // namespace abd
