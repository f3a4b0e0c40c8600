#include "cite/training.hpp"

#include <cmath>
#include <cstdio>

#include "cite/error.hpp"
#include "cite/layers.hpp"
#include "cite/rng.hpp"
#include "cite/sampling.hpp"

namespace cite {

Var cite_loss(Tape& t, Var scores, const Matrix& labels, std::optional<Var> phi, double lambda) {
  if (!(lambda >= 0)) throw ValidationError("cite_loss: lambda must be >= 0");
  Var loss = logistic_loss(t, scores, labels);
  if (!phi) return loss;
  return add_scaled(t, loss, l1_norm(t, *phi), lambda);
}

double cite_loss(const Matrix& scores, const Matrix& labels, const Matrix* phi, double lambda) {
  Tape t(false);
  const Var s = t.constant(scores);
  std::optional<Var> p;
  if (phi) p = t.constant(*phi);
  return t.value(cite_loss(t, s, labels, p, lambda))(0, 0);
}

AdamState make_adam_state(std::span<Parameter* const> params) {
  AdamState s;
  for (const Parameter* p : params) {
    s.m.emplace_back(p->value.rows(), p->value.cols(), 0.0);
    s.v.emplace_back(p->value.rows(), p->value.cols(), 0.0);
  }
  return s;
}

namespace {

void check_gradients(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (!p->grad.same_shape(p->value)) {
      throw DimensionError("gradient of " + p->name + " is " + p->grad.shape_string() + ", parameter is " +
                           p->value.shape_string());
    }
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
}

}  // namespace

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameter list");
  }
  check_gradients(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    auto& w = p.value.data();
    const auto& g = p.grad.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

void sgd_step(std::span<Parameter* const> params, double lr) {
  check_gradients(params);
  for (Parameter* p : params) {
    auto& w = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
  }
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kAdam: return "adam";
    case Phase::kSgd: return "sgd";
    case Phase::kStopped: return "stopped";
  }
  return "?";
}

ScheduleAction schedule_tick(ScheduleState& s, double val_metric) {
  if (s.phase == Phase::kStopped) throw StateError("schedule_tick called after the schedule stopped");
  ++s.ticks;
  s.improved = val_metric > s.best_val;
  if (s.improved) {
    s.best_val = val_metric;
    s.best_tick = s.ticks;
    s.epochs_since_improve = 0;
    return ScheduleAction::kContinue;
  }
  if (++s.epochs_since_improve < s.patience) return ScheduleAction::kContinue;
  s.epochs_since_improve = 0;
  if (s.phase == Phase::kAdam) {
    s.phase = Phase::kSgd;
    return ScheduleAction::kSwitchToSgd;
  }
  s.phase = Phase::kStopped;
  return ScheduleAction::kStop;
}

ModelConfig model_config_for(const RunConfig& cfg, const GroundingDataset& ds) {
  ModelConfig m;
  m.region_dim = ds.region_features.dim() + spatial_dims(cfg.spatial);
  m.phrase_dim = ds.phrase_features.dim();
  m.embed_dim = cfg.embed_dim;
  m.num_embeddings = cfg.num_embeddings;
  m.assignment = cfg.train.assignment == AssignmentMethod::kLearned ? AssignmentMode::kLearned
                                                                    : AssignmentMode::kExternal;
  m.seed = cfg.train.seed;
  m.validate();
  return m;
}

TrainResult train(const GroundingDataset& ds, const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  const auto train_idx = ds.split_indices(Split::kTrain);
  const auto val_idx = ds.split_indices(Split::kVal);
  if (train_idx.empty()) throw DataError("training split is empty");
  if (val_idx.empty()) throw DataError("validation split is empty");

  GroundingModel model;
  model.params = init_model(model_config_for(cfg, ds));
  model.assigner = PhraseAssigner::for_run(cfg, ds);
  model.spatial = cfg.spatial;
  const bool external = model.assigner.external();

  // Region inputs of every training image, built once.
  std::vector<Matrix> regions(ds.images.size());
  for (std::size_t i : train_idx) {
    const std::size_t img = ds.phrases[i].image_index;
    if (regions[img].rows() == 0) regions[img] = region_inputs(ds, img, cfg.spatial, cfg.proposals_per_image);
  }
  Matrix train_weights;
  if (external) train_weights = model.assigner.weight_rows(ds, train_idx);

  std::vector<Parameter*> params = model.params.parameters();
  AdamState adam = make_adam_state(params);
  ScheduleState sched;
  sched.patience = tc.patience;
  double lr = tc.learning_rate;
  GroundingModel best = model;

  TrainResult result;
  const std::size_t dv = model.params.config.region_dim;
  const std::size_t dt = model.params.config.phrase_dim;
  const std::size_t K = model.params.config.num_embeddings;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const Phase phase = sched.phase;
    const auto mined = mine_split(ds, train_idx, cfg.proposals_per_image, derive_seed(tc.seed, 2 * epoch));
    std::size_t skipped = 0;
    for (const auto& m : mined) skipped += m.skipped ? 1 : 0;
    result.skipped_phrases = skipped;
    const auto batches = build_minibatch(mined, tc.batch_size, derive_seed(tc.seed, 2 * epoch + 1));

    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Minibatch& batch = batches[b];
      if (batch.size() < 2) {
        ++result.skipped_batches;
        continue;
      }
      const std::size_t n = batch.size();
      Matrix r(n, dv), p(n, dt), y(n, 1), w;
      if (external) w = Matrix(n, K);
      for (std::size_t i = 0; i < n; ++i) {
        const PhraseSample& ph = ds.phrases[train_idx[batch[i].phrase]];
        const auto src_r = regions[ph.image_index].row(batch[i].proposal);
        std::copy(src_r.begin(), src_r.end(), r.row(i).begin());
        const auto src_p = ds.phrase_features.rows.row(ph.feature_row);
        std::copy(src_p.begin(), src_p.end(), p.row(i).begin());
        y(i, 0) = batch[i].label;
        if (external) {
          const auto src_w = train_weights.row(batch[i].phrase);
          std::copy(src_w.begin(), src_w.end(), w.row(i).begin());
        }
      }
      try {
        model.params.zero_grad();
        ForwardTrace trace = forward_pairs(model.params, r, p, external ? &w : nullptr, Mode::kTrain);
        std::optional<Var> phi;
        if (trace.phi.valid()) phi = trace.phi;
        const Var loss = cite_loss(trace.tape, trace.scores, y, phi, tc.lambda);
        const double value = trace.tape.value(loss)(0, 0);
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        trace.tape.backward(loss);
        if (phase == Phase::kAdam) {
          adam_step(params, adam, lr);
        } else {
          sgd_step(params, lr);
        }
        loss_sum += value;
        pair_count += n;
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ": " +
                           e.what());
      }
    }

    const double val = accuracy(model, ds, Split::kVal, cfg.proposals_per_image).accuracy;
    EpochLog row{epoch, phase, lr, pair_count ? loss_sum / static_cast<double>(pair_count) : 0.0, val};
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);

    const ScheduleAction action = schedule_tick(sched, val);
    if (sched.improved) {
      best = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = val;
    }
    if (action == ScheduleAction::kSwitchToSgd) {
      model = best;
      params = model.params.parameters();
      lr *= tc.sgd_lr_factor;
    } else if (action == ScheduleAction::kStop) {
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::string out = "epoch,phase,lr,train_loss,val_accuracy\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6g,%.9f,%.6f\n", e.epoch, phase_name(e.phase), e.lr, e.train_loss,
                  e.val_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace cite

namespace cite {

GradCheckResult model_grad_check(const ModelConfig& cfg, const ModelGradCheckOptions& options) {
  ModelParams params = init_model(cfg);
  Rng rng(derive_seed(cfg.seed, 0x6763));
  const std::size_t p = options.phrases;
  const std::size_t r = options.regions;
  const std::size_t n = p * r;
  Matrix regions(r, cfg.region_dim), phrases(p, cfg.phrase_dim);
  for (double& v : regions.data()) v = normal01(rng);
  for (double& v : phrases.data()) v = normal01(rng);
  Matrix region_rows(n, cfg.region_dim), phrase_rows(n, cfg.phrase_dim), labels(n, 1);
  Matrix weights;
  std::vector<std::size_t> phrase_embedding(p);
  for (auto& k : phrase_embedding) k = uniform_index(rng, cfg.num_embeddings);
  if (cfg.assignment == AssignmentMode::kExternal) weights = Matrix(n, cfg.num_embeddings);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const std::size_t row = i * r + j;
      std::copy(regions.row(j).begin(), regions.row(j).end(), region_rows.row(row).begin());
      std::copy(phrases.row(i).begin(), phrases.row(i).end(), phrase_rows.row(row).begin());
      labels(row, 0) = (rng() & 1) ? 1.0 : -1.0;
      if (weights.rows() > 0) weights(row, phrase_embedding[i]) = 1.0;
    }
  }
  const Matrix* w = weights.rows() > 0 ? &weights : nullptr;
  auto fn = [&](bool with_backward) {
    ForwardTrace trace = forward_pairs(params, region_rows, phrase_rows, w, Mode::kTrain, false);
    std::optional<Var> phi;
    if (trace.phi.valid()) phi = trace.phi;
    const Var loss = cite_loss(trace.tape, trace.scores, labels, phi, options.lambda);
    if (with_backward) trace.tape.backward(loss);
    LossEval e{trace.tape.value(loss)(0, 0), trace.tape.kink_signature(), {}};
    const Matrix& s = trace.tape.value(trace.scores);
    for (std::size_t i = 0; i < n; ++i) e.terms.push_back(softplus(-labels(i, 0) * s(i, 0)));
    if (phi) {
      for (double v : trace.tape.value(*phi).data()) e.terms.push_back(options.lambda * std::abs(v));
    }
    return e;
  };
  return grad_check(fn, params.parameters(), options.check);
}

}  // namespace cite
