#pragma once

// Expected Best-of-N reward: the lower bound in the probability of the
// unique optimum, exact expected maximum over a finite landscape, and a Monte
// Carlo estimator.

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "ttcal/core.hpp"
#include "ttcal/world.hpp"

namespace ttcal {

/// r* - (1 - p)^n (r* - r_other). Equals the exact expected maximum when every
/// suboptimal outcome has reward r_other and exceeds it otherwise.
double reward_lower_bound(double r_star, double r_other_max, double p, std::size_t n);

/// reward_lower_bound(p_cal) - reward_lower_bound(p_base).
double lb_improvement(double r_star, double r_other_max, double p_base, double p_cal,
                      std::size_t n);

class RewardLandscape {
 public:
  /// Requires probabilities summing to 1 within 1e-9 and a strict unique
  /// reward maximum.
  RewardLandscape(std::vector<double> probability, std::vector<double> reward);

  std::size_t size() const noexcept { return probability_.size(); }
  const std::vector<double>& probability() const noexcept { return probability_; }
  const std::vector<double>& reward() const noexcept { return reward_; }
  std::size_t optimum() const noexcept { return optimum_; }
  double r_star() const { return reward_[optimum_]; }
  double r_other_max() const noexcept { return r_other_max_; }
  double p_star() const { return probability_[optimum_]; }

 private:
  std::vector<double> probability_;
  std::vector<double> reward_;
  std::size_t optimum_ = 0;
  double r_other_max_ = 0.0;
};

/// Outcomes of an enumeration plus, if non-zero, the truncated mass as one
/// extra outcome with reward `residual_reward`. Probabilities are renormalized
/// to absorb rounding.
RewardLandscape landscape_from_enumeration(const Enumeration& e, double residual_reward = 0.0);

inline constexpr std::size_t kMaxLandscapeSize = 10'000;
inline constexpr std::size_t kMaxBonN = 64;

/// E[max of n iid rewards] via powers of the reward CDF.
double exact_expected_bon(const RewardLandscape& landscape, std::size_t n);

/// Same quantity by enumerating all n-tuples; for tiny landscapes only.
double brute_force_expected_bon(const RewardLandscape& landscape, std::size_t n,
                                std::uint64_t cap = 1'000'000);

struct McEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t trials = 0;
};

/// Mean over trials of the best reward among n fresh draws.
template <class Sampler, class Reward>
McEstimate mc_expected_bon(Sampler&& sample, Reward&& reward, std::size_t n, std::size_t trials,
                           Rng& rng) {
  require(trials >= 100, "mc_expected_bon: trials must be >= 100");
  require(n >= 1, "mc_expected_bon: n must be >= 1");
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double best = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) best = std::fmax(best, reward(sample(rng)));
    sum += best;
    sumsq += best * best;
  }
  McEstimate e;
  e.trials = trials;
  e.mean = sum / double(trials);
  const double var = std::fmax(0.0, (sumsq - double(trials) * e.mean * e.mean) / double(trials - 1));
  e.standard_error = std::sqrt(var / double(trials));
  return e;
}

struct DominanceRow {
  std::size_t n;
  double p_base;
  double p_cal;
  double lb_base;
  double lb_cal;
  double improvement;
  double exact_base;
  double exact_cal;
};

struct DominanceReport {
  std::vector<DominanceRow> rows;
  bool bound_improves = true;   // improvement > 0 at every n
  bool cdf_dominates = true;    // F_cal(r) <= F_base(r) at every reward level
};

/// Both landscapes must share rewards outcome by outcome.
DominanceReport dominance_check(const RewardLandscape& base, const RewardLandscape& cal,
                                const std::vector<std::size_t>& ns);

void write_dominance_csv(std::ostream& out, const DominanceReport& report);

}  // namespace ttcal
