#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cite/config.hpp"
#include "cite/dataset.hpp"
#include "cite/evaluation.hpp"
#include "cite/grad_check.hpp"
#include "cite/network.hpp"

namespace cite {

// logistic_loss(scores, labels) + lambda * ||phi||_1. Without phi (external
// assignment) the penalty is absent. ValidationError when lambda < 0.
Var cite_loss(Tape& t, Var scores, const Matrix& labels, std::optional<Var> phi, double lambda);
double cite_loss(const Matrix& scores, const Matrix& labels, const Matrix* phi, double lambda);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m;  // first moments, one per parameter
  std::vector<Matrix> v;  // second moments
};

AdamState make_adam_state(std::span<Parameter* const> params);
// Bias-corrected Adam on every parameter's grad. NumericError naming the
// tensor on a non-finite gradient (nothing is updated then).
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);
// p <- p - lr * g.
void sgd_step(std::span<Parameter* const> params, double lr);

enum class Phase { kAdam, kSgd, kStopped };
const char* phase_name(Phase p);

enum class ScheduleAction { kContinue, kSwitchToSgd, kStop };

struct ScheduleState {
  Phase phase = Phase::kAdam;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;
  std::size_t patience = 5;
  bool improved = false;  // the last tick set a new best
  std::size_t ticks = 0;
  std::size_t best_tick = 0;  // 1-based tick of the best value
};

// One call per epoch with the validation accuracy. A strict improvement
// resets the counter; reaching `patience` switches Adam to SGD (the caller
// restores the best checkpoint and scales the learning rate) and, in the
// SGD phase, stops. StateError once stopped.
ScheduleAction schedule_tick(ScheduleState& state, double val_metric);

struct EpochLog {
  std::size_t epoch = 0;
  Phase phase = Phase::kAdam;
  double lr = 0.0;
  double train_loss = 0.0;  // mean objective per training pair
  double val_accuracy = 0.0;
};

struct TrainResult {
  GroundingModel model;  // best on validation
  std::vector<EpochLog> log;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t skipped_phrases = 0;  // per epoch: phrases without a positive proposal
  std::size_t skipped_batches = 0;  // single-row batches (batch norm needs two rows)
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
};

// Model shape implied by a run config and a dataset.
ModelConfig model_config_for(const RunConfig& cfg, const GroundingDataset& ds);

// Adam then SGD with early stopping on validation accuracy. Deterministic
// for a fixed config and dataset.
TrainResult train(const GroundingDataset& ds, const RunConfig& cfg, const TrainHooks& hooks = {});

// epoch,phase,lr,train_loss,val_accuracy
std::string training_log_csv(std::span<const EpochLog> log);

}  // namespace cite

namespace cite {

struct ModelGradCheckOptions {
  std::size_t phrases = 4;
  std::size_t regions = 6;
  double lambda = 5e-4;
  GradCheckOptions check;
};

// Finite-difference check of the whole network under cite_loss on random
// inputs: every phrase paired with every region, random +-1 labels, train
// mode batch norm. External models get random one-hot weights.
GradCheckResult model_grad_check(const ModelConfig& cfg, const ModelGradCheckOptions& options = {});

}  // namespace cite
