#include "ttcal/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

namespace ttcal {

TokenSet make_token_set(const std::vector<Tokens>& sequences, const std::vector<TokenId>& special) {
  TokenSet s;
  for (const auto& seq : sequences)
    for (TokenId t : seq)
      if (std::find(special.begin(), special.end(), t) == special.end()) s.insert(t);
  return s;
}

OverlapMetrics overlap_metrics(const TokenSet& target, const TokenSet& x) {
  require(!target.empty() && !x.empty(), "overlap_metrics: empty token set");
  std::size_t inter = 0;
  for (TokenId t : x) inter += target.count(t);
  const double i = double(inter);
  const double u = double(target.size() + x.size() - inter);
  OverlapMetrics m;
  m.jaccard = i / u;
  m.dice = 2.0 * i / double(target.size() + x.size());
  m.recall = i / double(target.size());
  m.precision = i / double(x.size());
  return m;
}

OverlapMetrics macro_average(const std::vector<OverlapMetrics>& per_problem) {
  require(!per_problem.empty(), "macro_average: no problems");
  OverlapMetrics a;
  for (const auto& m : per_problem) {
    a.jaccard += m.jaccard;
    a.dice += m.dice;
    a.recall += m.recall;
    a.precision += m.precision;
  }
  const double n = double(per_problem.size());
  a.jaccard /= n;
  a.dice /= n;
  a.recall /= n;
  a.precision /= n;
  return a;
}

double normalized_entropy(const std::vector<Tokens>& sequences, std::size_t vocab) {
  require(vocab >= 2, "normalized_entropy: vocab must be >= 2");
  std::map<TokenId, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& seq : sequences)
    for (TokenId t : seq) {
      require(t < vocab, "normalized_entropy: token out of range");
      ++counts[t];
      ++total;
    }
  require(total > 0, "normalized_entropy: no tokens");
  double h = 0.0;
  for (const auto& [t, c] : counts) {
    const double p = double(c) / double(total);
    h -= p * std::log(p);
  }
  return std::clamp(h / std::log(double(vocab)), 0.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "spearman: length mismatch");
  require(x.size() >= 3, "spearman: need at least 3 pairs");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void write_overlap_csv(std::ostream& out, const std::vector<std::string>& labels,
                       const std::vector<OverlapMetrics>& rows) {
  require(labels.size() == rows.size(), "write_overlap_csv: label count mismatch");
  out << "label,jaccard,dice,recall,precision\n";
  const auto old = out.precision(10);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << labels[i] << ',' << rows[i].jaccard << ',' << rows[i].dice << ',' << rows[i].recall
        << ',' << rows[i].precision << '\n';
  out.precision(old);
}

}  // namespace ttcal
