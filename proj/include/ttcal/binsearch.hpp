#pragma once

// Binary search over an integer range, plain and with noisy inverse-distance
// reward probes that shrink the interval before each comparison.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ttcal/core.hpp"

namespace ttcal {

struct SearchConfig {
  std::int64_t low = 0;
  std::int64_t high = 10'000;
  std::int64_t target = 0;
  std::size_t probes = 0;  // 0 = plain binary search
  double sigma = 0.02;
  double margin = 3.0;     // confidence multiplier on sigma
  std::size_t trials = 10'000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SearchStep {
  std::int64_t low, high;  // interval the comparison was made in
  std::vector<std::int64_t> probes;
  std::vector<double> rewards;
  std::int64_t best = 0;
  std::int64_t comparison = 0;
  bool compared = true;        // false when probes alone pinned the point
  bool verification = false;   // query spent on checking a probe-derived bound
  // Interval known from comparisons alone, after this step. Strictly shrinks.
  std::int64_t certified_low, certified_high;
};

struct SearchTrace {
  std::vector<SearchStep> steps;
  std::size_t step_count = 0;    // comparison queries
  std::size_t probe_count = 0;
  std::size_t expansions = 0;    // probe brackets that excluded the target
  std::int64_t result = 0;
  bool success = false;
};

/// 1 / (|x - t| + 1) + N(0, sigma^2), unclamped.
double noisy_reward(std::int64_t x, std::int64_t t, double sigma, Rng& rng);

/// Plain midpoint search; c = floor((L + H) / 2), query "c < t".
SearchTrace vanilla_search(std::int64_t low, std::int64_t high, std::int64_t target);

/// With probes > 0 each iteration probes evenly spaced points, brackets the
/// best one by inverting a lower confidence bound of its reward, intersects
/// with the interval and compares at the midpoint. The confidence multiplier
/// is margin + sqrt(2 ln n) so that it holds jointly over the n probes. When
/// sigma > 0 a point reached only through probe bounds is checked with one
/// extra comparison; a failed check restores the certified interval and
/// doubles the margin.
SearchTrace reward_guided_search(const SearchConfig& config, Rng& rng);

/// Evenly spaced interior points of [low, high].
std::vector<std::int64_t> probe_points(std::int64_t low, std::int64_t high, std::size_t n);

struct SweepRow {
  std::size_t probes;
  double mean_steps;
  double sd_steps;
  std::size_t trials;
  double sigma;
  double margin;
  std::size_t failures;
};

/// Uniform targets from config.seed; the same targets for every n.
std::vector<SweepRow> sweep(const SearchConfig& base, const std::vector<std::size_t>& ns,
                            std::size_t trials);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
std::string trace_to_json(const SearchTrace& trace);

}  // namespace ttcal
