#include "cite/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cite/error.hpp"

namespace cite {

namespace {

LossEval checked_eval(const LossFn& fn, bool with_backward) {
  LossEval e = fn(with_backward);
  if (!std::isfinite(e.loss)) throw NumericError("grad_check: non-finite loss");
  return e;
}

}  // namespace

GradCheckResult grad_check(const LossFn& loss_fn, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  const LossEval base = checked_eval(loss_fn, true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Parameter& p = *params[t];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > options.samples_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double orig = p.value[idx];
      p.value[idx] = orig + options.h;
      const LossEval plus = checked_eval(loss_fn, false);
      p.value[idx] = orig - options.h;
      const LossEval minus = checked_eval(loss_fn, false);
      p.value[idx] = orig;
      if (plus.kink_signature != base.kink_signature ||
          minus.kink_signature != base.kink_signature) {
        ++result.skipped;
        continue;
      }
      double diff = 0.0;
      if (!plus.terms.empty() && plus.terms.size() == minus.terms.size()) {
        for (std::size_t i = 0; i < plus.terms.size(); ++i) diff += plus.terms[i] - minus.terms[i];
      } else {
        diff = plus.loss - minus.loss;
      }
      const double gn = diff / (2.0 * options.h);
      const double ga = analytic[t][idx];
      const double denom = std::max({std::abs(ga), std::abs(gn), 1e-8});
      const double err = std::abs(ga - gn) / denom;
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = p.name;
        result.worst_index = idx;
      }
    }
  }
  // Leave the analytic gradients in place for the caller.
  for (std::size_t t = 0; t < params.size(); ++t) params[t]->grad = analytic[t];
  return result;
}

}  // namespace cite
