#include "ttcal/binsearch.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

namespace ttcal {

void SearchConfig::validate() const {
  require(low < high, "SearchConfig: need low < high");
  require(target >= low && target <= high, "SearchConfig: target outside [low, high]");
  require(sigma >= 0.0 && std::isfinite(sigma), "SearchConfig: sigma must be >= 0");
  require(margin >= 0.0 && std::isfinite(margin), "SearchConfig: margin must be >= 0");
}

double noisy_reward(std::int64_t x, std::int64_t t, double sigma, Rng& rng) {
  require(sigma >= 0.0, "noisy_reward: sigma must be >= 0");
  const double r = 1.0 / (double(std::llabs(x - t)) + 1.0);
  if (sigma == 0.0) return r;
  return r + std::normal_distribution<double>(0.0, sigma)(rng);
}

std::vector<std::int64_t> probe_points(std::int64_t low, std::int64_t high, std::size_t n) {
  require(low <= high, "probe_points: empty interval");
  std::vector<std::int64_t> xs;
  const std::int64_t width = high - low + 1;
  const auto nn = std::int64_t(n);
  for (std::int64_t i = 0; i < nn; ++i) xs.push_back(low + (2 * i + 1) * width / (2 * nn));
  return xs;
}

SearchTrace vanilla_search(std::int64_t low, std::int64_t high, std::int64_t target) {
  require(low <= high && target >= low && target <= high, "vanilla_search: target outside range");
  SearchTrace tr;
  std::int64_t L = low, H = high;
  while (L < H) {
    SearchStep s{};
    s.low = L;
    s.high = H;
    s.comparison = L + (H - L) / 2;
    if (s.comparison < target)
      L = s.comparison + 1;
    else
      H = s.comparison;
    s.certified_low = L;
    s.certified_high = H;
    tr.steps.push_back(std::move(s));
  }
  tr.step_count = tr.steps.size();
  tr.result = L;
  tr.success = L == target;
  return tr;
}

SearchTrace reward_guided_search(const SearchConfig& config, Rng& rng) {
  config.validate();
  const std::int64_t t = config.target;
  const std::size_t n = config.probes;
  const double union_term = n > 1 ? std::sqrt(2.0 * std::log(double(n))) : 0.0;
  double margin = config.margin;

  SearchTrace tr;
  std::int64_t L = config.low, H = config.high;
  std::int64_t lo_c = L, hi_c = H;  // bounds established by comparisons

  auto compare = [&](std::int64_t c, SearchStep& s) {
    s.comparison = c;
    const bool below = c < t;
    if (below) {
      L = c + 1;
      lo_c = std::max(lo_c, c + 1);
    } else {
      H = c;
      hi_c = std::min(hi_c, c);
    }
    s.certified_low = lo_c;
    s.certified_high = hi_c;
    return below;
  };
  auto restore = [&] {
    ++tr.expansions;
    margin = margin > 0.0 ? 2.0 * margin : 1.0;
    L = lo_c;
    H = hi_c;
  };

  for (;;) {
    if (L == H) {
      const std::int64_t v = L;
      if (config.sigma > 0.0 && lo_c < v) {
        SearchStep s{};
        s.low = s.high = v;
        s.verification = true;
        const bool ok = compare(v - 1, s);
        tr.steps.push_back(std::move(s));
        if (!ok) {
          restore();
          continue;
        }
        L = H = v;
      }
      if (config.sigma > 0.0 && hi_c > v) {
        SearchStep s{};
        s.low = s.high = v;
        s.verification = true;
        const bool beyond = compare(v, s);
        tr.steps.push_back(std::move(s));
        if (beyond) {
          restore();
          continue;
        }
        L = H = v;
      }
      break;
    }

    SearchStep s{};
    if (n > 0) {
      s.probes = probe_points(L, H, n);
      for (std::int64_t x : s.probes) s.rewards.push_back(noisy_reward(x, t, config.sigma, rng));
      tr.probe_count += n;
      const std::size_t b =
          std::size_t(std::max_element(s.rewards.begin(), s.rewards.end()) - s.rewards.begin());
      s.best = s.probes[b];
      const double r_lo = s.rewards[b] - (margin + union_term) * config.sigma;
      const double r_min = 1.0 / double(H - L + 1);
      // r_lo above 1 still only certifies the probe itself.
      const auto d = std::max<std::int64_t>(
          0, std::int64_t(std::floor(1.0 / std::max(r_lo, r_min) - 1.0 + 1e-9)));
      L = std::max(L, s.best - d);
      H = std::min(H, s.best + d);
      if (config.sigma == 0.0) {
        // Exact rewards: the bracket is as good as a comparison.
        lo_c = std::max(lo_c, L);
        hi_c = std::min(hi_c, H);
      }
      if (L == H) {
        s.low = s.high = L;
        s.comparison = L;
        s.certified_low = lo_c;
        s.certified_high = hi_c;
        s.compared = false;
        tr.steps.push_back(std::move(s));
        continue;
      }
    }
    s.low = L;
    s.high = H;
    compare(L + (H - L) / 2, s);
    tr.steps.push_back(std::move(s));
  }

  tr.step_count = 0;
  for (const auto& s : tr.steps)
    if (s.compared) ++tr.step_count;
  tr.result = L;
  tr.success = L == t;
  return tr;
}

std::vector<SweepRow> sweep(const SearchConfig& base, const std::vector<std::size_t>& ns,
                            std::size_t trials) {
  require(trials >= 100, "sweep: trials must be >= 100");
  SearchConfig probe_cfg = base;
  probe_cfg.target = base.low;
  probe_cfg.validate();
  std::vector<std::int64_t> targets(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(derive_seed(base.seed, 0, i));
    targets[i] = std::uniform_int_distribution<std::int64_t>(base.low, base.high)(rng);
  }
  std::vector<SweepRow> rows;
  for (std::size_t n : ns) {
    double sum = 0.0, sumsq = 0.0;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      SearchConfig c = base;
      c.probes = n;
      c.target = targets[i];
      Rng rng(derive_seed(base.seed, 1 + n, i));
      const SearchTrace tr = reward_guided_search(c, rng);
      failures += !tr.success;
      sum += double(tr.step_count);
      sumsq += double(tr.step_count) * double(tr.step_count);
    }
    const double mean = sum / double(trials);
    const double var = std::max(0.0, (sumsq - double(trials) * mean * mean) / double(trials - 1));
    rows.push_back({n, mean, std::sqrt(var), trials, base.sigma, base.margin, failures});
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "n,mean_steps,sd,trials,sigma,margin,failures\n";
  const auto old = out.precision(10);
  for (const auto& r : rows)
    out << r.probes << ',' << r.mean_steps << ',' << r.sd_steps << ',' << r.trials << ','
        << r.sigma << ',' << r.margin << ',' << r.failures << '\n';
  out.precision(old);
}

std::string trace_to_json(const SearchTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"low", s.low},
                     {"high", s.high},
                     {"probes", s.probes},
                     {"rewards", s.rewards},
                     {"best", s.best},
                     {"comparison", s.comparison},
                     {"compared", s.compared},
                     {"verification", s.verification},
                     {"certified", {s.certified_low, s.certified_high}}});
  }
  nlohmann::json j = {{"steps", steps},
                      {"step_count", trace.step_count},
                      {"probe_count", trace.probe_count},
                      {"expansions", trace.expansions},
                      {"result", trace.result},
                      {"success", trace.success}};
  return j.dump();
}

}  // namespace ttcal
