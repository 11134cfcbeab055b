#pragma once

// Token-set overlap, unigram entropy and rank correlation.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ttcal/core.hpp"

namespace ttcal {

using TokenSet = std::set<TokenId>;

/// Distinct tokens of all sequences, minus the special ids.
TokenSet make_token_set(const std::vector<Tokens>& sequences, const std::vector<TokenId>& special);

struct OverlapMetrics {
  double jaccard = 0.0;
  double dice = 0.0;
  double recall = 0.0;     // |target & x| / |target|
  double precision = 0.0;  // |target & x| / |x|
};

OverlapMetrics overlap_metrics(const TokenSet& target, const TokenSet& x);

/// Unweighted mean over problems.
OverlapMetrics macro_average(const std::vector<OverlapMetrics>& per_problem);

/// Entropy of the pooled unigram distribution divided by ln V.
double normalized_entropy(const std::vector<Tokens>& sequences, std::size_t vocab);

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(const std::vector<double>& x);

/// Spearman rho; nullopt when either side has zero rank variance.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

void write_overlap_csv(std::ostream& out, const std::vector<std::string>& labels,
                       const std::vector<OverlapMetrics>& rows);

}  // namespace ttcal
