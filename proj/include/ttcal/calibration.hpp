#pragma once

// Fitting (delta, T) on cached base logits of high-reward completions.

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "ttcal/model.hpp"

namespace ttcal {

struct CacheStep {
  LogitVector logits;  // base logits g for this prefix
  TokenId target;      // token the completion emitted next
  std::size_t problem;
  std::size_t completion;
  std::size_t step;
};

struct LogitCache {
  std::size_t vocab = 0;
  std::vector<CacheStep> steps;

  std::size_t size() const noexcept { return steps.size(); }
  void validate() const;
};

/// One step per generated token of every completion.
LogitCache build_cache(const ArModel& model, std::size_t problem,
                       const std::vector<Tokens>& completions);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  double weight_decay = 1e-2;  // lambda on ||delta||^2, delta only
  double base_temperature = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool learn_delta = true;
  bool learn_temperature = true;

  void validate() const;
};

struct GradientReport {
  std::vector<double> grad_delta;
  double grad_temperature = 0.0;
  ProbabilityVector mean_predicted;  // average calibrated distribution over steps
  ProbabilityVector mean_target;     // average one-hot of the targets
  double loss = 0.0;                 // regularized
  // Mean shifted logit of the targets and its expectation under the model.
  // Their gap, divided by T^2, is the temperature gradient.
  double mean_target_logit = 0.0;
  double mean_expected_logit = 0.0;
};

/// Mean per-step NLL plus lambda * ||delta||^2.
double nll_loss(const LogitCache& cache, const LmHead& head, const CalibrationParams& params,
                double lambda);

/// Analytic gradient of nll_loss with respect to delta and T.
GradientReport gradients(const LogitCache& cache, const LmHead& head,
                         const CalibrationParams& params, double lambda = 0.0);

struct TraceRow {
  std::size_t epoch;
  double loss;
  double temperature;
  double delta_norm;
};

struct FitResult {
  CalibrationParams params;
  std::vector<TraceRow> trace;  // row 0 is the initial point
  bool diverged = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Full-batch Adam on (delta, log T) with decoupled weight decay on delta.
/// Returns the last iterate, or the best one seen if the last is worse than
/// the start. On a non-finite loss the initial parameters are returned with
/// diverged set.
FitResult fit(const LogitCache& cache, const LmHead& head, const TrainConfig& config);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace ttcal
