#include "ttcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ttcal {

LmHead::LmHead(std::size_t vocab, std::size_t hidden, std::vector<double> weights)
    : vocab_(vocab), hidden_(hidden), weights_(std::move(weights)) {
  require(vocab >= 1 && hidden >= 1, "LmHead: empty dimensions");
  require(weights_.size() == vocab * hidden, "LmHead: weight count != V * d");
  require(std::all_of(weights_.begin(), weights_.end(), [](double w) { return std::isfinite(w); }),
          "LmHead: non-finite weight");
}

LmHead LmHead::identity(std::size_t n) {
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  return LmHead(n, n, std::move(w));
}

std::vector<double> LmHead::apply(std::span<const double> h) const {
  require(h.size() == hidden_, "LmHead::apply: hidden dimension mismatch");
  std::vector<double> out(vocab_, 0.0);
  for (std::size_t v = 0; v < vocab_; ++v) {
    const double* w = weights_.data() + v * hidden_;
    double acc = 0.0;
    for (std::size_t j = 0; j < hidden_; ++j) acc += w[j] * h[j];
    out[v] = acc;
  }
  return out;
}

std::vector<double> LmHead::apply_transpose(std::span<const double> u) const {
  require(u.size() == vocab_, "LmHead::apply_transpose: vocab dimension mismatch");
  std::vector<double> out(hidden_, 0.0);
  for (std::size_t v = 0; v < vocab_; ++v) {
    if (u[v] == 0.0) continue;
    const double* w = weights_.data() + v * hidden_;
    for (std::size_t j = 0; j < hidden_; ++j) out[j] += w[j] * u[v];
  }
  return out;
}

CalibrationParams CalibrationParams::base(std::size_t hidden, double temperature) {
  CalibrationParams p{std::vector<double>(hidden, 0.0), temperature};
  p.validate();
  return p;
}

void CalibrationParams::validate() const {
  require(std::isfinite(temperature) && temperature > 0.0,
          "CalibrationParams: temperature must be finite and > 0");
  require(std::all_of(delta.begin(), delta.end(), [](double x) { return std::isfinite(x); }),
          "CalibrationParams: non-finite delta");
}

double CalibrationParams::delta_norm() const {
  return std::sqrt(std::inner_product(delta.begin(), delta.end(), delta.begin(), 0.0));
}

LogitVector shift_bias(const LmHead& head, std::span<const double> delta) {
  return head.apply(delta);
}

ProbabilityVector softmax(std::span<const double> scores) {
  require(!scores.empty(), "softmax: empty input");
  const double mx = *std::max_element(scores.begin(), scores.end());
  ProbabilityVector p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

static void check_logits(std::span<const double> logits) {
  require(std::all_of(logits.begin(), logits.end(), [](double x) { return std::isfinite(x); }),
          "calibrated_distribution: non-finite logits");
}

std::vector<double> calibrated_scores(std::span<const double> logits, const LmHead& head,
                                      const CalibrationParams& params) {
  params.validate();
  check_logits(logits);
  require(logits.size() == head.vocab(), "calibrated_distribution: logits length != V");
  require(params.delta.size() == head.hidden(), "calibrated_distribution: delta length != d");
  std::vector<double> z = head.apply(params.delta);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + z[i]) / params.temperature;
  return z;
}

ProbabilityVector calibrated_distribution(std::span<const double> logits, const LmHead& head,
                                          const CalibrationParams& params) {
  return softmax(calibrated_scores(logits, head, params));
}

ProbabilityVector calibrated_distribution_shifted(std::span<const double> logits,
                                                  std::span<const double> shift,
                                                  double temperature) {
  require(std::isfinite(temperature) && temperature > 0.0,
          "calibrated_distribution: temperature must be > 0");
  require(logits.size() == shift.size(), "calibrated_distribution: shift length != V");
  check_logits(logits);
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + shift[i]) / temperature;
  return softmax(z);
}

static double log_prob_at(std::span<const double> z, TokenId y) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  return z[y] - mx - std::log(sum);
}

double sequence_log_prob(const ArModel& model, std::size_t problem, const Tokens& completion,
                         const CalibrationParams& params) {
  require(!completion.empty(), "sequence_log_prob: empty completion");
  const auto& vocab = model.vocabulary();
  for (TokenId t : completion) require(vocab.contains(t), "sequence_log_prob: token out of range");
  const auto& head = model.head();
  double total = 0.0;
  for (std::size_t t = 0; t < completion.size(); ++t) {
    const LogitVector g = model.logits(problem, std::span(completion.data(), t));
    total += log_prob_at(calibrated_scores(g, head, params), completion[t]);
  }
  return total;
}

TokenId sample_token(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_nonzero = i;
    acc += probs[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // u landed in the rounding gap above the accumulated mass.
  return static_cast<TokenId>(last_nonzero);
}

Tokens sample_completion(const ArModel& model, std::size_t problem,
                         const CalibrationParams& params, Rng& rng, std::size_t max_len) {
  require(max_len >= 1, "sample_completion: max_len must be >= 1");
  params.validate();
  const auto& head = model.head();
  require(params.delta.size() == head.hidden(), "sample_completion: delta length != d");
  const std::vector<double> shift = head.apply(params.delta);
  const TokenId end = model.vocabulary().end;
  Tokens out;
  out.reserve(max_len);
  while (out.size() < max_len) {
    const LogitVector g = model.logits(problem, out);
    const ProbabilityVector p = calibrated_distribution_shifted(g, shift, params.temperature);
    const TokenId y = sample_token(p, rng);
    out.push_back(y);
    if (y == end) break;
  }
  return out;
}

}  // namespace ttcal
