#pragma once

// Toy models and tiny worlds shared by the test binaries.

#include <cmath>
#include <functional>
#include <utility>

#include "ttcal/world.hpp"

namespace support {

using LogitFn = std::function<ttcal::LogitVector(std::size_t, std::span<const ttcal::TokenId>)>;

// ArModel whose logits come from a callable; head is the identity over V.
class FnModel final : public ttcal::ArModel {
 public:
  FnModel(std::size_t vocab, std::size_t max_len, LogitFn fn)
      : vocab_(vocab, 0), head_(ttcal::LmHead::identity(vocab)), max_len_(max_len), fn_(std::move(fn)) {}

  const ttcal::Vocabulary& vocabulary() const override { return vocab_; }
  const ttcal::LmHead& head() const override { return head_; }
  std::size_t max_len() const override { return max_len_; }
  ttcal::LogitVector logits(std::size_t problem, std::span<const ttcal::TokenId> prefix) const override {
    return fn_(problem, prefix);
  }

 private:
  ttcal::Vocabulary vocab_;
  ttcal::LmHead head_;
  std::size_t max_len_;
  LogitFn fn_;
};

inline FnModel uniform_model(std::size_t vocab, std::size_t max_len) {
  return FnModel(vocab, max_len, [vocab](std::size_t, std::span<const ttcal::TokenId>) {
    return ttcal::LogitVector(vocab, 0.0);
  });
}

// Small enough to enumerate: 4 content tokens over 3 content dims, gold path
// of 5 tokens.
inline ttcal::WorldConfig tiny_world(std::size_t problems = 10) {
  ttcal::WorldConfig w;
  w.vocab_size = 7;
  w.hidden_dim = 6;
  w.n_problems = problems;
  w.reasoning_steps = 1;
  w.step_tokens = 1;
  w.answer_tokens = 1;
  w.max_len = 5;
  return w;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::fmax(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace support
