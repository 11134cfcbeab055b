#include "ttcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace ttcal {

void LogitCache::validate() const {
  require(!steps.empty(), "LogitCache: empty cache");
  for (const auto& s : steps) {
    require(s.logits.size() == vocab, "LogitCache: logits length != V");
    require(s.target < vocab, "LogitCache: target out of range");
    require(std::all_of(s.logits.begin(), s.logits.end(), [](double x) { return std::isfinite(x); }),
            "LogitCache: non-finite logits");
  }
}

LogitCache build_cache(const ArModel& model, std::size_t problem,
                       const std::vector<Tokens>& completions) {
  require(!completions.empty(), "build_cache: no completions");
  const auto& vocab = model.vocabulary();
  LogitCache cache;
  cache.vocab = vocab.size;
  for (std::size_t c = 0; c < completions.size(); ++c) {
    const Tokens& y = completions[c];
    require(!y.empty(), "build_cache: empty completion");
    for (TokenId t : y) require(vocab.contains(t), "build_cache: token out of range");
    for (std::size_t t = 0; t < y.size(); ++t)
      cache.steps.push_back({model.logits(problem, std::span(y.data(), t)), y[t], problem, c, t});
  }
  return cache;
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
  require(epochs >= 1, "TrainConfig: epochs must be >= 1");
  require(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
  require(base_temperature > 0.0, "TrainConfig: base_temperature must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "TrainConfig: betas must be in [0, 1)");
  require(epsilon > 0.0, "TrainConfig: epsilon must be > 0");
}

namespace {

void check_shapes(const LogitCache& cache, const LmHead& head, const CalibrationParams& params) {
  params.validate();
  cache.validate();
  require(cache.vocab == head.vocab(), "calibration: cache vocabulary != head vocabulary");
  require(params.delta.size() == head.hidden(), "calibration: delta length != d");
}

// Shifted logits u = g + W delta and their log-sum-exp at temperature T.
struct StepEval {
  std::vector<double> u;
  std::vector<double> p;
  double nll;
};

StepEval evaluate(const CacheStep& s, std::span<const double> shift, double T) {
  StepEval e;
  const std::size_t V = s.logits.size();
  e.u.resize(V);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < V; ++v) {
    e.u[v] = s.logits[v] + shift[v];
    mx = std::max(mx, e.u[v] / T);
  }
  e.p.resize(V);
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    e.p[v] = std::exp(e.u[v] / T - mx);
    sum += e.p[v];
  }
  for (double& x : e.p) x /= sum;
  e.nll = -(e.u[s.target] / T - mx - std::log(sum));
  return e;
}

double squared_norm(const std::vector<double>& v) {
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

}  // namespace

double nll_loss(const LogitCache& cache, const LmHead& head, const CalibrationParams& params,
                double lambda) {
  check_shapes(cache, head, params);
  require(lambda >= 0.0, "nll_loss: lambda must be >= 0");
  const auto shift = head.apply(params.delta);
  double total = 0.0;
  for (const auto& s : cache.steps) total += evaluate(s, shift, params.temperature).nll;
  return total / double(cache.size()) + lambda * squared_norm(params.delta);
}

GradientReport gradients(const LogitCache& cache, const LmHead& head,
                         const CalibrationParams& params, double lambda) {
  check_shapes(cache, head, params);
  require(lambda >= 0.0, "gradients: lambda must be >= 0");
  const double T = params.temperature;
  const double N = double(cache.size());
  const std::size_t V = head.vocab();
  const auto shift = head.apply(params.delta);

  GradientReport r;
  r.mean_predicted.assign(V, 0.0);
  r.mean_target.assign(V, 0.0);
  double nll = 0.0, target_logit = 0.0, expected_logit = 0.0;
  for (const auto& s : cache.steps) {
    const StepEval e = evaluate(s, shift, T);
    nll += e.nll;
    for (std::size_t v = 0; v < V; ++v) {
      r.mean_predicted[v] += e.p[v];
      expected_logit += e.p[v] * e.u[v];
    }
    r.mean_target[s.target] += 1.0;
    target_logit += e.u[s.target];
  }
  for (double& x : r.mean_predicted) x /= N;
  for (double& x : r.mean_target) x /= N;
  r.mean_target_logit = target_logit / N;
  r.mean_expected_logit = expected_logit / N;

  std::vector<double> diff(V);
  for (std::size_t v = 0; v < V; ++v) diff[v] = (r.mean_predicted[v] - r.mean_target[v]) / T;
  r.grad_delta = head.apply_transpose(diff);
  for (std::size_t j = 0; j < r.grad_delta.size(); ++j) r.grad_delta[j] += 2.0 * lambda * params.delta[j];
  r.grad_temperature = (r.mean_target_logit - r.mean_expected_logit) / (T * T);
  r.loss = nll / N + lambda * squared_norm(params.delta);
  return r;
}

FitResult fit(const LogitCache& cache, const LmHead& head, const TrainConfig& config) {
  config.validate();
  const std::size_t d = head.hidden();
  const CalibrationParams initial = CalibrationParams::base(d, config.base_temperature);
  check_shapes(cache, head, initial);

  FitResult out;
  out.params = initial;
  const double lambda = config.weight_decay;
  const double loss0 = nll_loss(cache, head, initial, lambda);
  out.initial_loss = out.final_loss = loss0;
  out.trace.push_back({0, loss0, initial.temperature, 0.0});
  if (!std::isfinite(loss0)) {
    out.diverged = true;
    return out;
  }

  // theta = (delta, log T); Adam moments over the unregularized gradient.
  std::vector<double> delta = initial.delta;
  double log_t = std::log(config.base_temperature);
  std::vector<double> m(d + 1, 0.0), v(d + 1, 0.0);
  CalibrationParams best = initial;
  double best_loss = loss0;
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const CalibrationParams cur{delta, std::exp(log_t)};
    const GradientReport g = gradients(cache, head, cur, 0.0);
    std::vector<double> grad(g.grad_delta);
    grad.push_back(cur.temperature * g.grad_temperature);
    if (!config.learn_delta) std::fill(grad.begin(), grad.begin() + d, 0.0);
    if (!config.learn_temperature) grad[d] = 0.0;

    b1t *= config.beta1;
    b2t *= config.beta2;
    const double lr = config.learning_rate;
    std::vector<double> step(d + 1);
    for (std::size_t i = 0; i <= d; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - b1t);
      const double vh = v[i] / (1.0 - b2t);
      step[i] = lr * mh / (std::sqrt(vh) + config.epsilon);
    }
    if (config.learn_delta) {
      for (std::size_t j = 0; j < d; ++j) delta[j] = delta[j] * (1.0 - lr * lambda) - step[j];
    }
    if (config.learn_temperature) log_t -= step[d];

    const CalibrationParams next{delta, std::exp(log_t)};
    const double loss =
        std::all_of(delta.begin(), delta.end(), [](double x) { return std::isfinite(x); }) &&
                std::isfinite(next.temperature) && next.temperature > 0.0
            ? nll_loss(cache, head, next, lambda)
            : std::numeric_limits<double>::quiet_NaN();
    out.trace.push_back({epoch, loss, next.temperature, next.delta_norm()});
    if (!std::isfinite(loss)) {
      out.diverged = true;
      out.params = initial;
      out.final_loss = loss0;
      return out;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = next;
    }
    out.params = next;
    out.final_loss = loss;
  }
  if (out.final_loss > loss0) {
    out.params = best;
    out.final_loss = best_loss;
  }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "epoch,loss,temperature,delta_norm\n";
  const auto old = out.precision(17);
  for (const auto& r : trace)
    out << r.epoch << ',' << r.loss << ',' << r.temperature << ',' << r.delta_norm << '\n';
  out.precision(old);
}

}  // namespace ttcal
