#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tppkit/augment.hpp"
#include "tppkit/autodiff.hpp"
#include "tppkit/event_stream.hpp"
#include "tppkit/model.hpp"

namespace tppkit {

// Quadrature log-likelihood with the rate held constant over each token gap:
//   sum over REAL tokens of log rate[label]
//   - sum over all tokens i >= 1 of (t_i - t_{i-1}) * sum_{k < M} rate_i[k].
// rates[i-1] belongs to token i; only the first M entries enter the integral.
ad::Var quadrature_ll(const AugmentedSequence& seq, std::span<const ad::Var> rates);
double quadrature_ll(const AugmentedSequence& seq, std::span<const std::vector<double>> rates);

// Mean cross-entropy of softmax(rate vector) against each token's label
// (fake tokens target label M) over tokens i >= 1, EOS excluded.
ad::Var prediction_loss(const AugmentedSequence& seq, std::span<const ad::Var> rates);
double prediction_loss(const AugmentedSequence& seq, std::span<const std::vector<double>> rates);

// Sum of squared f1 and f2 weights; biases excluded.
ad::Var weight_penalty(const ParamVars& params);
double weight_penalty(const ModelParams& params);

struct ObjectiveTerms {
  double objective = 0.0;  // ll - lambda_p * prediction - lambda_w * penalty
  double ll = 0.0;
  double prediction = 0.0;
  double penalty = 0.0;
};

ObjectiveTerms objective(const AugmentedSequence& seq, const ModelParams& params,
                         const ModelConfig& config);

struct ObjectiveGradient {
  ObjectiveTerms terms;
  ModelParams grad;  // d objective / d params
};

ObjectiveGradient objective_gradient(const AugmentedSequence& seq, const ModelParams& params,
                                     const ModelConfig& config);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  int epochs = 50;
  int batch = 1;  // streams per optimizer step
  std::uint64_t seed = 1;
  int patience = 0;  // epochs without validation gain before stopping; 0 disables
  int threads = 1;
  bool record_timing = true;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double objective = 0.0;
  double train_ll = 0.0;
  double val_ll = 0.0;  // NaN without validation data
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // epoch whose params were returned
  std::uint64_t steps = 0;
};

struct TrainResult {
  ModelConfig config;  // time_scale resolved
  ModelParams params;
  TrainReport report;
};

// Adam ascent on the objective, one step per batch of streams. Validation
// data, when given, is scored every epoch and drives early stopping.
TrainResult train(const Dataset& train_set, const Dataset* validation, ModelConfig config,
                  const TrainConfig& train_config);

// CSV `epoch,objective,train_ll,val_ll,seconds`.
void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace tppkit
