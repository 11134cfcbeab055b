#pragma once

// Autoregressive model abstraction, LM head and the calibrated next-token
// distribution softmax((logits + W * delta) / T).

#include <cstddef>
#include <span>
#include <vector>

#include "ttcal/core.hpp"

namespace ttcal {

using LogitVector = std::vector<double>;
using ProbabilityVector = std::vector<double>;

struct Vocabulary {
  std::size_t size = 0;
  TokenId end = 0;

  Vocabulary() = default;
  Vocabulary(std::size_t size, TokenId end) : size(size), end(end) {
    require(size >= 2, "Vocabulary: size must be at least 2");
    require(end < size, "Vocabulary: END id out of range");
  }
  bool contains(TokenId t) const noexcept { return t < size; }
};

/// Fixed V x d matrix mapping hidden states to vocabulary logits. Row-major.
class LmHead {
 public:
  LmHead() = default;
  LmHead(std::size_t vocab, std::size_t hidden, std::vector<double> weights);
  static LmHead identity(std::size_t n);

  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::span<const double> row(std::size_t v) const {
    return {weights_.data() + v * hidden_, hidden_};
  }
  double at(std::size_t v, std::size_t j) const { return weights_[v * hidden_ + j]; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// W * h, length V.
  std::vector<double> apply(std::span<const double> h) const;
  /// W^T * u, length d.
  std::vector<double> apply_transpose(std::span<const double> u) const;

  bool operator==(const LmHead&) const = default;

 private:
  std::size_t vocab_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> weights_;
};

struct CalibrationParams {
  std::vector<double> delta;
  double temperature = 1.0;

  /// delta = 0 at the given temperature.
  static CalibrationParams base(std::size_t hidden, double temperature);
  void validate() const;
  double delta_norm() const;
  bool operator==(const CalibrationParams&) const = default;
};

/// Logit source for a frozen autoregressive model. Implementations must be
/// deterministic and safe to call concurrently.
class ArModel {
 public:
  virtual ~ArModel() = default;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual const LmHead& head() const = 0;
  virtual std::size_t max_len() const = 0;
  virtual LogitVector logits(std::size_t problem, std::span<const TokenId> prefix) const = 0;
};

/// W * delta.
LogitVector shift_bias(const LmHead& head, std::span<const double> delta);

/// Numerically stable softmax of a raw score vector.
ProbabilityVector softmax(std::span<const double> scores);

/// Scaled scores (logits + W * delta) / T, validated.
std::vector<double> calibrated_scores(std::span<const double> logits, const LmHead& head,
                                      const CalibrationParams& params);

ProbabilityVector calibrated_distribution(std::span<const double> logits, const LmHead& head,
                                          const CalibrationParams& params);

/// Same as calibrated_distribution with a precomputed W * delta.
ProbabilityVector calibrated_distribution_shifted(std::span<const double> logits,
                                                  std::span<const double> shift,
                                                  double temperature);

/// Sum over t of log p(y_t | y_<t) under the calibrated distribution.
double sequence_log_prob(const ArModel& model, std::size_t problem, const Tokens& completion,
                         const CalibrationParams& params);

/// Inverse-CDF draw from a probability vector.
TokenId sample_token(std::span<const double> probs, Rng& rng);

/// Ancestral sampling until END or max_len tokens.
Tokens sample_completion(const ArModel& model, std::size_t problem,
                         const CalibrationParams& params, Rng& rng, std::size_t max_len);

}  // namespace ttcal
