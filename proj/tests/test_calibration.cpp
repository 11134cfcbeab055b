#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "ttcal/calibration.hpp"
#include "ttcal/strategies.hpp"

using namespace ttcal;
using doctest::Approx;

namespace {

LogitCache one_step(LogitVector g, TokenId target) {
  LogitCache c;
  c.vocab = g.size();
  c.steps.push_back({std::move(g), target, 0, 0, 0});
  return c;
}

LogitCache random_cache(Rng& rng, std::size_t v, std::size_t steps, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  LogitCache c;
  c.vocab = v;
  for (std::size_t s = 0; s < steps; ++s) {
    LogitVector l(v);
    for (double& x : l) x = g(rng);
    c.steps.push_back({l, TokenId(rng() % v), 0, 0, s});
  }
  return c;
}

LmHead random_head(Rng& rng, std::size_t v, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> w(v * d);
  for (double& x : w) x = g(rng);
  return LmHead(v, d, w);
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-3}); }

}  // namespace

TEST_CASE("build_cache counts one step per token") {
  std::atomic<int> calls{0};
  const support::FnModel m(5, 8, [&](std::size_t, std::span<const TokenId> prefix) {
    ++calls;
    return LogitVector{double(prefix.size()), 0, 1, 2, 3};
  });
  CHECK(build_cache(m, 0, {{1, 2, 0}}).size() == 3);
  calls = 0;
  const LogitCache c = build_cache(m, 0, {{1, 0}, {4, 3, 2, 1, 0}});
  CHECK(c.size() == 7);
  CHECK(calls == 7);
  CHECK(c.steps[3].logits[0] == 1.0);  // second completion, prefix length 1
  CHECK(c.steps[3].target == 3);
  CHECK(c.steps[3].completion == 1);
  CHECK_THROWS_AS(build_cache(m, 0, {}), ContractViolation);
  CHECK_THROWS_AS(build_cache(m, 0, {{7}}), ContractViolation);

  // Fitting afterwards needs only the cache and the head.
  calls = 0;
  fit(c, m.head(), TrainConfig{});
  CHECK(calls == 0);
}

TEST_CASE("nll_loss closed forms") {
  const auto id = LmHead::identity(2);
  const LogitCache c = one_step({0, 0}, 0);
  CHECK(nll_loss(c, id, {{0, 0}, 1.0}, 0.0) == Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(nll_loss(c, id, {{0, 0}, 1.0}, 0.0) == Approx(0.693147).epsilon(1e-6));

  const double oracle = std::log(1.0 + std::exp(-1.0)) + 0.01;
  CHECK(nll_loss(c, id, {{1, 0}, 1.0}, 0.01) == Approx(oracle).epsilon(1e-14));
  CHECK(nll_loss(c, id, {{1, 0}, 1.0}, 0.01) == Approx(0.323262).epsilon(1e-6));

  Rng rng(4);
  const LogitCache r = random_cache(rng, 6, 9, 2.0);
  const LmHead w = random_head(rng, 6, 3);
  const CalibrationParams zero{{0, 0, 0}, 0.7};
  CHECK(nll_loss(r, w, zero, 0.0) == nll_loss(r, w, zero, 5.0));
}

TEST_CASE("gradient closed forms") {
  const auto id = LmHead::identity(2);
  GradientReport g = gradients(one_step({0, 0}, 0), id, {{0, 0}, 1.0}, 0.0);
  CHECK(g.grad_delta[0] == Approx(-0.5).epsilon(1e-15));
  CHECK(g.grad_delta[1] == Approx(0.5).epsilon(1e-15));

  const LogitCache c = one_step({1, 0}, 0);
  g = gradients(c, id, {{0, 0}, 1.0}, 0.0);
  const double e = std::exp(1.0);
  CHECK(g.grad_temperature == Approx(1.0 - e / (1.0 + e)).epsilon(1e-14));
  CHECK(g.grad_temperature == Approx(0.268941).epsilon(1e-6));
  const double h = 1e-6;
  const double fd = (nll_loss(c, id, {{0, 0}, 1.0 + h}, 0.0) - nll_loss(c, id, {{0, 0}, 1.0 - h}, 0.0)) / (2 * h);
  CHECK(rel_err(fd, g.grad_temperature) <= 1e-6);
  CHECK(g.mean_target_logit == 1.0);
  CHECK(g.mean_expected_logit == Approx(e / (1.0 + e)));
}

TEST_CASE("calibrated cache has zero gradient and does not move") {
  // Two steps with equal logits and opposite targets: mean prediction equals
  // the mean target and the target logit equals the expected logit.
  const auto id = LmHead::identity(2);
  LogitCache c = one_step({0.3, 0.3}, 0);
  c.steps.push_back({{0.3, 0.3}, 1, 0, 0, 1});
  const GradientReport g = gradients(c, id, {{0, 0}, 0.8}, 0.01);
  CHECK(std::fabs(g.grad_delta[0]) <= 1e-9);
  CHECK(std::fabs(g.grad_delta[1]) <= 1e-9);
  CHECK(std::fabs(g.grad_temperature) <= 1e-9);
  CHECK(support::max_abs_diff(g.mean_predicted, g.mean_target) <= 1e-15);

  const FitResult f = fit(c, id, TrainConfig{});
  CHECK(f.params.temperature == Approx(0.8).epsilon(1e-6));
  CHECK(f.params.delta_norm() <= 1e-6);
  CHECK_FALSE(f.diverged);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(2024);
  std::uniform_real_distribution<double> log_t(std::log(0.25), std::log(4.0));
  std::normal_distribution<double> nd(0.0, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t v = 2 + rng() % 15, d = 1 + rng() % 8, steps = 1 + rng() % 50;
    const LogitCache c = random_cache(rng, v, steps, 2.0);
    const LmHead w = random_head(rng, v, d);
    CalibrationParams p{std::vector<double>(d), std::exp(log_t(rng))};
    for (double& x : p.delta) x = nd(rng);
    const double lambda = (trial % 2) ? 0.01 : 0.0;
    const GradientReport g = gradients(c, w, p, lambda);
    const double h = 1e-5;
    for (std::size_t j = 0; j < d; ++j) {
      auto a = p, b = p;
      a.delta[j] += h;
      b.delta[j] -= h;
      const double fd = (nll_loss(c, w, a, lambda) - nll_loss(c, w, b, lambda)) / (2 * h);
      CHECK(rel_err(fd, g.grad_delta[j]) <= 1e-6);
    }
    auto a = p, b = p;
    a.temperature += h * p.temperature;
    b.temperature -= h * p.temperature;
    const double fd = (nll_loss(c, w, a, lambda) - nll_loss(c, w, b, lambda)) / (2 * h * p.temperature);
    CHECK(rel_err(fd, g.grad_temperature) <= 1e-6);
    CHECK(g.loss == Approx(nll_loss(c, w, p, lambda)).epsilon(1e-13));
  }
}

TEST_CASE("weight decay touches only the delta gradient") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const LogitCache c = random_cache(rng, 8, 20, 1.5);
    const LmHead w = random_head(rng, 8, 4);
    const CalibrationParams p{{0.3, -0.1, 0.7, -1.2}, 0.5 + trial * 0.05};
    const double lambda = 0.01 * (1 + trial % 5);
    const GradientReport a = gradients(c, w, p, lambda), b = gradients(c, w, p, 2 * lambda);
    CHECK(a.grad_temperature == b.grad_temperature);
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(b.grad_delta[j] - a.grad_delta[j] == Approx(2 * lambda * p.delta[j]).epsilon(1e-12));
  }
}

TEST_CASE("descent exists from the base point") {
  Rng rng(99);
  std::size_t nonzero = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Targets drawn from a sharper distribution than the logits imply.
    LogitCache c = random_cache(rng, 10, 30, 1.0);
    for (auto& s : c.steps) {
      std::vector<double> sharp(s.logits);
      for (double& x : sharp) x *= 3.0;
      s.target = sample_token(softmax(sharp), rng);
    }
    const LmHead w = random_head(rng, 10, 4);
    const double lambda = 0.01;
    const CalibrationParams start{std::vector<double>(4, 0.0), 1.0};
    const GradientReport g = gradients(c, w, start, lambda);
    double norm = g.grad_temperature * g.grad_temperature;
    for (double x : g.grad_delta) norm += x * x;
    if (norm == 0.0) continue;
    ++nonzero;
    bool reduced = false;
    for (double eta : {1e-1, 1e-2, 1e-3, 1e-4}) {
      CalibrationParams next = start;
      for (std::size_t j = 0; j < 4; ++j) next.delta[j] -= eta * g.grad_delta[j];
      next.temperature -= eta * g.grad_temperature;
      if (next.temperature > 0 && nll_loss(c, w, next, lambda) < g.loss) reduced = true;
    }
    CHECK(reduced);
  }
  CHECK(nonzero == 100);
}

TEST_CASE("argmax targets sharpen the temperature") {
  Rng rng(31);
  LogitCache c = random_cache(rng, 12, 40, 1.0);
  for (auto& s : c.steps)
    s.target = TokenId(std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
  const LmHead w = random_head(rng, 12, 5);
  const FitResult f = fit(c, w, TrainConfig{});
  REQUIRE(f.trace.size() == 101);
  CHECK(f.params.temperature < 0.8);
  for (std::size_t i = 1; i < f.trace.size(); ++i) CHECK(f.trace[i].temperature <= f.trace[i - 1].temperature);
  CHECK(f.final_loss < f.initial_loss);
}

TEST_CASE("first epoch reduces the loss on world caches") {
  WorldConfig wc;
  wc.n_problems = 20;
  const SyntheticWorld world = make_world(3, wc);
  const RewardOracle oracle(world);
  TrainConfig one;
  one.epochs = 1;
  for (std::size_t p = 0; p < world.n_problems(); ++p) {
    const auto base = CalibrationParams::base(wc.hidden_dim, one.base_temperature);
    const RolloutSet rs = sample_rollouts(world, oracle, p, base, 16, 5, 0, Phase::explore);
    std::vector<Tokens> top;
    for (std::size_t i : top_k_indices(rs.completions, 4)) top.push_back(rs.completions[i].tokens);
    const FitResult f = fit(build_cache(world, p, top), world.head(), one);
    REQUIRE(f.trace.size() == 2);
    CHECK(f.trace[1].loss < f.trace[0].loss);
  }
}

TEST_CASE("fit flags divergence and keeps the base point") {
  const auto id = LmHead::identity(2);
  const LogitCache c = one_step({1, 0}, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  const FitResult f = fit(c, id, cfg);
  CHECK(f.diverged);
  CHECK(f.params == CalibrationParams::base(2, cfg.base_temperature));
  CHECK_FALSE(std::isfinite(f.trace.back().loss));
}

TEST_CASE("fit respects the learn switches") {
  Rng rng(5);
  const LogitCache c = random_cache(rng, 6, 20, 1.0);
  const LmHead w = random_head(rng, 6, 3);
  TrainConfig t_only;
  t_only.learn_delta = false;
  CHECK(fit(c, w, t_only).params.delta_norm() == 0.0);
  TrainConfig d_only;
  d_only.learn_temperature = false;
  CHECK(fit(c, w, d_only).params.temperature == 0.8);
}

TEST_CASE("train config and cache validation") {
  TrainConfig t;
  t.learning_rate = 0;
  CHECK_THROWS_AS(t.validate(), ContractViolation);
  t = {};
  t.epochs = 0;
  CHECK_THROWS_AS(t.validate(), ContractViolation);
  t = {};
  t.base_temperature = 0;
  CHECK_THROWS_AS(t.validate(), ContractViolation);
  LogitCache empty;
  empty.vocab = 2;
  CHECK_THROWS_AS(empty.validate(), ContractViolation);
  CHECK_THROWS_AS(one_step({NAN, 0}, 0).validate(), ContractViolation);
  CHECK_THROWS_AS(one_step({0, 0}, 2).validate(), ContractViolation);
}

TEST_CASE("trace csv") {
  std::ostringstream out;
  write_trace_csv(out, {{0, 0.5, 0.8, 0.0}, {1, 0.25, 0.79, 0.01}});
  CHECK(out.str().rfind("epoch,loss,temperature,delta_norm\n0,0.5,0.8", 0) == 0);
}
