#include "ttcal/theory.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>

namespace ttcal {

namespace {

void check_bound_args(double r_star, double r_other_max, double p, std::size_t n) {
  require(std::isfinite(r_star) && std::isfinite(r_other_max), "reward bound: non-finite reward");
  require(r_star > r_other_max, "reward bound: r_star must exceed r_other_max");
  require(p >= 0.0 && p <= 1.0, "reward bound: p must be in [0, 1]");
  require(n >= 1, "reward bound: n must be >= 1");
}

}  // namespace

double reward_lower_bound(double r_star, double r_other_max, double p, std::size_t n) {
  check_bound_args(r_star, r_other_max, p, n);
  return r_star - std::pow(1.0 - p, double(n)) * (r_star - r_other_max);
}

double lb_improvement(double r_star, double r_other_max, double p_base, double p_cal,
                      std::size_t n) {
  check_bound_args(r_star, r_other_max, p_base, n);
  check_bound_args(r_star, r_other_max, p_cal, n);
  if (p_base == p_cal) return 0.0;
  const double gap = r_star - r_other_max;
  if (p_cal == 1.0) return gap * std::pow(1.0 - p_base, double(n));
  if (p_base == 1.0) return -gap * std::pow(1.0 - p_cal, double(n));
  // (1-a)^n - (1-b)^n in log space; 1 - p rounds to 1 for tiny p.
  const double lb = double(n) * std::log1p(-p_base), lc = double(n) * std::log1p(-p_cal);
  return gap * std::exp(lc) * std::expm1(lb - lc);
}

RewardLandscape::RewardLandscape(std::vector<double> probability, std::vector<double> reward)
    : probability_(std::move(probability)), reward_(std::move(reward)) {
  require(!probability_.empty(), "RewardLandscape: empty outcome set");
  require(probability_.size() == reward_.size(), "RewardLandscape: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    require(probability_[i] >= 0.0 && std::isfinite(reward_[i]),
            "RewardLandscape: negative probability or non-finite reward");
    total += probability_[i];
  }
  require(std::abs(total - 1.0) <= 1e-9, "RewardLandscape: probabilities must sum to 1");
  optimum_ = std::size_t(std::max_element(reward_.begin(), reward_.end()) - reward_.begin());
  r_other_max_ = -INFINITY;
  for (std::size_t i = 0; i < size(); ++i)
    if (i != optimum_) r_other_max_ = std::max(r_other_max_, reward_[i]);
  require(size() >= 2, "RewardLandscape: need at least two outcomes");
  require(reward_[optimum_] > r_other_max_, "RewardLandscape: reward maximum is not unique");
}

RewardLandscape landscape_from_enumeration(const Enumeration& e, double residual_reward) {
  std::vector<double> p, r;
  for (const auto& o : e.outcomes) {
    p.push_back(o.probability);
    r.push_back(o.reward);
  }
  if (e.residual_mass > 0.0) {
    p.push_back(e.residual_mass);
    r.push_back(residual_reward);
  }
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  require(std::abs(total - 1.0) <= 1e-6, "landscape_from_enumeration: mass does not sum to 1");
  for (double& x : p) x /= total;
  return RewardLandscape(std::move(p), std::move(r));
}

namespace {

// Reward level -> probability, ascending.
std::map<double, double> level_masses(const RewardLandscape& l) {
  std::map<double, double> m;
  for (std::size_t i = 0; i < l.size(); ++i) m[l.reward()[i]] += l.probability()[i];
  return m;
}

}  // namespace

double exact_expected_bon(const RewardLandscape& landscape, std::size_t n) {
  require(n >= 1, "exact_expected_bon: n must be >= 1");
  if (landscape.size() > kMaxLandscapeSize)
    throw CapExceeded("exact_expected_bon: outcome count", landscape.size(), kMaxLandscapeSize);
  if (n > kMaxBonN) throw CapExceeded("exact_expected_bon: n", n, kMaxBonN);
  double below = 0.0, expected = 0.0;
  for (const auto& [r, mass] : level_masses(landscape)) {
    const double upto = std::min(1.0, below + mass);
    expected += r * (std::pow(upto, double(n)) - std::pow(below, double(n)));
    below = upto;
  }
  return expected;
}

double brute_force_expected_bon(const RewardLandscape& landscape, std::size_t n,
                                std::uint64_t cap) {
  require(n >= 1, "brute_force_expected_bon: n must be >= 1");
  const std::size_t m = landscape.size();
  std::uint64_t tuples = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (tuples > cap / m) throw CapExceeded("brute_force_expected_bon", cap + 1, cap);
    tuples *= m;
  }
  std::vector<std::size_t> idx(n, 0);
  double expected = 0.0;
  for (std::uint64_t t = 0; t < tuples; ++t) {
    double p = 1.0, best = -INFINITY;
    for (std::size_t i : idx) {
      p *= landscape.probability()[i];
      best = std::max(best, landscape.reward()[i]);
    }
    expected += p * best;
    for (std::size_t k = 0; k < n && ++idx[k] == m; ++k) idx[k] = 0;
  }
  return expected;
}

DominanceReport dominance_check(const RewardLandscape& base, const RewardLandscape& cal,
                                const std::vector<std::size_t>& ns) {
  require(base.size() == cal.size() && base.reward() == cal.reward(),
          "dominance_check: landscapes must share outcomes and rewards");
  require(!ns.empty(), "dominance_check: empty n list");
  DominanceReport rep;
  const double rs = base.r_star(), ro = base.r_other_max();
  for (std::size_t n : ns) {
    DominanceRow row{n,
                     base.p_star(),
                     cal.p_star(),
                     reward_lower_bound(rs, ro, base.p_star(), n),
                     reward_lower_bound(rs, ro, cal.p_star(), n),
                     lb_improvement(rs, ro, base.p_star(), cal.p_star(), n),
                     NAN,
                     NAN};
    if (n <= kMaxBonN && base.size() <= kMaxLandscapeSize) {
      row.exact_base = exact_expected_bon(base, n);
      row.exact_cal = exact_expected_bon(cal, n);
    }
    rep.bound_improves = rep.bound_improves && row.improvement > 0.0;
    rep.rows.push_back(row);
  }
  const auto mb = level_masses(base), mc = level_masses(cal);
  double fb = 0.0, fc = 0.0;
  auto ic = mc.begin();
  for (const auto& [r, mass] : mb) {
    fb += mass;
    fc += ic->second;
    ++ic;
    if (fc > fb + 1e-12) rep.cdf_dominates = false;
  }
  return rep;
}

void write_dominance_csv(std::ostream& out, const DominanceReport& report) {
  out << "n,p_base,p_cal,lb_base,lb_cal,improvement,exact_base,exact_cal\n";
  const auto old = out.precision(12);
  for (const auto& r : report.rows)
    out << r.n << ',' << r.p_base << ',' << r.p_cal << ',' << r.lb_base << ',' << r.lb_cal << ','
        << r.improvement << ',' << r.exact_base << ',' << r.exact_cal << '\n';
  out.precision(old);
}

}  // namespace ttcal
