#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cite/error.hpp"
#include "cite/grad_check.hpp"
#include "cite/kernels.hpp"
#include "cite/layers.hpp"
#include "test_util.hpp"

using namespace cite;
using cite::testing::max_rel_error;
using cite::testing::numeric_gradient;
using cite::testing::random_matrix;

namespace {

// Weighted sum of the op output against fixed random weights, so the
// upstream gradient is non-trivial.
struct Probe {
  Matrix weights;
  double operator()(const Matrix& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  }
};

// sum_ij probe[i,j] * op(x)[i,j], as a 1x1 tape node.
Var probe_sum(Tape& t, Var y, const Matrix& probe) {
  const Matrix& yv = t.value(y);
  Var prod = hadamard(t, y, t.constant(probe));
  Var col = affine(t, prod, t.constant(Matrix(yv.cols(), 1, 1.0)));
  return affine(t, t.constant(Matrix(1, yv.rows(), 1.0)), col);
}

template <typename Op>
double layer_grad_error(const Matrix& x, Op op, std::mt19937_64& rng) {
  Tape shape_tape;
  const Matrix y0 = shape_tape.value(op(shape_tape, shape_tape.constant(x)));
  Probe probe{random_matrix(y0.rows(), y0.cols(), rng)};

  Parameter px("x", x);
  Tape t;
  Var total = probe_sum(t, op(t, t.param(px)), probe.weights);
  px.zero_grad();
  t.backward(total);

  auto f = [&](const Matrix& xx) {
    Tape tt;
    return probe(tt.value(op(tt, tt.constant(xx))));
  };
  return max_rel_error(px.grad, numeric_gradient(f, x));
}

}  // namespace

TEST(Affine, IdentityInput) {
  Tape t;
  Var y = affine(t, t.constant({{1, 0}, {0, 1}}), t.constant({{1, 2}, {3, 4}}), t.constant({{0, 0}}));
  EXPECT_EQ(t.value(y), Matrix({{1, 2}, {3, 4}}));
}

TEST(Affine, HandArithmetic) {
  Tape t;
  Var y = affine(t, t.constant({{1, 1}}), t.constant({{1, 2}, {3, 4}}), t.constant({{10, 10}}));
  EXPECT_EQ(t.value(y), Matrix({{14, 16}}));
}

TEST(Affine, ShapeMismatch) {
  Tape t;
  EXPECT_THROW(affine(t, t.constant(Matrix(2, 3)), t.constant(Matrix(2, 2))), DimensionError);
}

TEST(Relu, Forward) {
  Tape t;
  EXPECT_EQ(t.value(relu(t, t.constant({{-1, 2}}))), Matrix({{0, 2}}));
  EXPECT_EQ(t.value(relu(t, t.constant({{-1, -2}, {-0.5, -3}}))), Matrix(2, 2, 0.0));
}

TEST(Relu, BackwardMatchesFiniteDifference) {
  // y = relu(x) at x = [[-1, 2]], upstream [[1, 1]] -> [[0, 1]].
  Parameter x("x", {{-1, 2}});
  Tape t;
  Var y = relu(t, t.param(x));
  Var total = affine(t, y, t.constant({{1}, {1}}));
  x.zero_grad();
  t.backward(total);
  auto f = [](const Matrix& xx) { return std::max(xx[0], 0.0) + std::max(xx[1], 0.0); };
  const Matrix fd = numeric_gradient(f, Matrix({{-1, 2}}));
  EXPECT_EQ(x.grad, Matrix({{0, 1}}));
  EXPECT_LT(max_abs_diff(x.grad, fd), 1e-8);
}

TEST(BatchNorm, ConstantColumnIsZero) {
  BatchNormState s("bn", 1);
  Tape t;
  Var y = batch_norm(t, t.constant({{3}, {3}, {3}}), s, Mode::kTrain);
  EXPECT_EQ(t.value(y), Matrix(3, 1, 0.0));
}

TEST(BatchNorm, TwoPointColumn) {
  BatchNormState s("bn", 1);
  s.eps = 1e-12;
  Tape t;
  Var y = batch_norm(t, t.constant({{1}, {3}}), s, Mode::kTrain);
  EXPECT_NEAR(t.value(y)[0], -1.0, 1e-9);
  EXPECT_NEAR(t.value(y)[1], 1.0, 1e-9);
}

TEST(BatchNorm, InferWithUnitStatsIsIdentity) {
  BatchNormState s("bn", 2);
  Tape t;
  const Matrix x{{0.5, -2.0}, {1.5, 3.0}};
  Var y = batch_norm(t, t.constant(x), s, Mode::kInfer);
  EXPECT_LT(max_abs_diff(t.value(y), x), 1e-5 * 3.0);
}

TEST(BatchNorm, TrainNeedsTwoRows) {
  BatchNormState s("bn", 2);
  Tape t;
  EXPECT_THROW(batch_norm(t, t.constant(Matrix(1, 2, 1.0)), s, Mode::kTrain), ValidationError);
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  BatchNormState s("bn", 1);
  Tape t;
  batch_norm(t, t.constant({{1}, {3}}), s, Mode::kTrain);
  EXPECT_DOUBLE_EQ(s.running_mean[0], 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(s.running_var[0], 0.9 * 1.0 + 0.1 * 1.0);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    Matrix x = random_matrix(n, 5, rng, 3.0);
    for (double& v : x.data()) v += 7.0;
    BatchNormState s("bn", 5);
    Tape t;
    const Matrix& y = t.value(batch_norm(t, t.constant(x), s, Mode::kTrain));
    for (std::size_t c = 0; c < 5; ++c) {
      double mean = 0, var = 0;
      for (std::size_t r = 0; r < n; ++r) mean += y(r, c);
      mean /= n;
      for (std::size_t r = 0; r < n; ++r) var += (y(r, c) - mean) * (y(r, c) - mean);
      var /= n;
      double raw_mean = 0, raw_var = 0;
      for (std::size_t r = 0; r < n; ++r) raw_mean += x(r, c);
      raw_mean /= n;
      for (std::size_t r = 0; r < n; ++r) raw_var += (x(r, c) - raw_mean) * (x(r, c) - raw_mean);
      raw_var /= n;
      EXPECT_NEAR(mean, 0.0, 1e-6);
      // eps = 1e-5 shrinks the variance by var / (var + eps); columns with
      // batch variance under 0.1 sit inside that guard band.
      if (raw_var >= 0.1) {
        EXPECT_NEAR(var, 1.0, 1e-4);
      }
    }
  }
}

TEST(L2Normalize, Examples) {
  Tape t;
  const Matrix& y = t.value(l2_normalize_rows(t, t.constant({{3, 4}}), 1e-10));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  const Matrix unit{{0.6, 0.8}};
  EXPECT_LT(max_abs_diff(t.value(l2_normalize_rows(t, t.constant(unit), 1e-10)), unit), 1e-15);
  EXPECT_EQ(t.value(l2_normalize_rows(t, t.constant(Matrix(1, 3, 0.0)), 1e-10)), Matrix(1, 3, 0.0));
}

TEST(L2Normalize, IdempotentProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x = random_matrix(1 + rng() % 6, 1 + rng() % 8, rng, 2.0);
    Tape t;
    Var once = l2_normalize_rows(t, t.constant(x), 1e-10);
    Var twice = l2_normalize_rows(t, once, 1e-10);
    EXPECT_LT(max_abs_diff(t.value(once), t.value(twice)), 1e-9);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double ss = 0;
      for (double v : t.value(once).row(r)) ss += v * v;
      EXPECT_NEAR(ss, 1.0, 1e-12);
    }
  }
}

TEST(Hadamard, Examples) {
  Tape t;
  const Matrix a{{1.5, -2}, {3, 4}};
  EXPECT_EQ(t.value(hadamard(t, t.constant(a), t.constant(Matrix(2, 2, 1.0)))), a);
  EXPECT_EQ(t.value(hadamard(t, t.constant({{2, 3}}), t.constant({{4, 5}}))), Matrix({{8, 15}}));
  EXPECT_THROW(hadamard(t, t.constant(Matrix(1, 2)), t.constant(Matrix(2, 1))), DimensionError);
}

TEST(Softmax, Examples) {
  Tape t;
  const Matrix& a = t.value(softmax_rows(t, t.constant({{0, 0}})));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  const Matrix& b = t.value(softmax_rows(t, t.constant({{std::log(1.0), std::log(3.0)}})));
  EXPECT_NEAR(b[0], 0.25, 1e-15);
  EXPECT_NEAR(b[1], 0.75, 1e-15);
  const Matrix& c = t.value(softmax_rows(t, t.constant({{5.0, 1005.0}})));
  EXPECT_TRUE(c.all_finite());
  EXPECT_NEAR(c[0], 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(c[1], 1.0);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x = random_matrix(1 + rng() % 5, 1 + rng() % 7, rng, 10.0);
    Matrix shifted = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
      for (double& v : shifted.row(r)) v += c;
    }
    Tape t;
    const Matrix& y = t.value(softmax_rows(t, t.constant(x)));
    const Matrix& ys = t.value(softmax_rows(t, t.constant(shifted)));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0;
      for (double v : y.row(r)) {
        s += v;
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_LT(max_abs_diff(y, ys), 1e-9);
  }
}

TEST(LogisticLoss, Examples) {
  Tape t;
  EXPECT_NEAR(t.value(logistic_loss(t, t.constant({{0}}), Matrix({{1}})))[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(t.value(logistic_loss(t, t.constant({{2}}), Matrix({{1}})))[0], 0.126928011042973, 1e-12);
  EXPECT_NEAR(t.value(logistic_loss(t, t.constant({{2}}), Matrix({{-1}})))[0], 2.126928011042973, 1e-12);
}

TEST(LogisticLoss, RejectsBadLabels) {
  Tape t;
  EXPECT_THROW(logistic_loss(t, t.constant({{0, 1}}), Matrix({{1, 0}})), ValidationError);
}

TEST(LogisticLoss, MaskSkipsEntries) {
  Tape t;
  const Matrix mask{{1, 0}};
  EXPECT_NEAR(t.value(logistic_loss(t, t.constant({{0, 50}}), Matrix({{1, -1}}), &mask))[0],
              std::log(2.0), 1e-15);
}

TEST(LogisticLoss, NonNegativeAndZeroScoreCount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    Matrix x = random_matrix(n, 1, rng, 30.0);
    Matrix y(n, 1);
    for (double& v : y.data()) v = (rng() & 1) ? 1.0 : -1.0;
    Tape t;
    EXPECT_GE(t.value(logistic_loss(t, t.constant(x), y))[0], 0.0);
    EXPECT_NEAR(t.value(logistic_loss(t, t.constant(Matrix(n, 1)), y))[0], n * std::log(2.0), 1e-12);
  }
}

TEST(LogisticLoss, OverflowSafe) {
  Tape t;
  const double v = t.value(logistic_loss(t, t.constant({{-1000}}), Matrix({{1}})))[0];
  EXPECT_DOUBLE_EQ(v, 1000.0);
}

TEST(L1Norm, Examples) {
  Tape t;
  EXPECT_EQ(t.value(l1_norm(t, t.constant(Matrix(2, 2))))[0], 0.0);
  EXPECT_EQ(t.value(l1_norm(t, t.constant({{-1, 2}, {3, -4}})))[0], 10.0);
  Parameter x("x", {{-1, 2}});
  Tape g;
  Var n = l1_norm(g, g.param(x));
  x.zero_grad();
  g.backward(n);
  EXPECT_EQ(x.grad, Matrix({{-1, 1}}));
}

TEST(Backward, AffineSumGivesColumnSums) {
  // loss = sum(affine(x, W, 0)) with x = ones(3x2): dW[k, j] = sum_i x[i, k] = 3.
  Parameter w("W", {{1, 2}, {3, 4}});
  Tape t;
  Var y = affine(t, t.constant(Matrix(3, 2, 1.0)), t.param(w));
  Var s = affine(t, t.constant(Matrix(1, 3, 1.0)), affine(t, y, t.constant(Matrix(2, 1, 1.0))));
  w.zero_grad();
  t.backward(s);
  EXPECT_EQ(w.grad, Matrix(2, 2, 3.0));
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  Parameter used("a", {{2}});
  Parameter unused("b", {{5}});
  unused.zero_grad();
  Tape t;
  Var y = l1_norm(t, t.param(used));
  used.zero_grad();
  t.backward(y);
  EXPECT_EQ(used.grad[0], 1.0);
  EXPECT_EQ(unused.grad[0], 0.0);
}

TEST(Backward, BeforeForwardIsStateError) {
  Tape t;
  EXPECT_THROW(t.backward(Var{0}), StateError);
}

TEST(Backward, VisitsInReverseOrder) {
  Parameter x("x", {{1, -2}});
  Tape t;
  Var a = relu(t, t.param(x));
  Var b = softmax_rows(t, a);
  Var c = l1_norm(t, b);
  x.zero_grad();
  t.backward(c);
  const auto& order = t.backward_order();
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0], c.id);
  EXPECT_EQ(order[1], b.id);
  EXPECT_EQ(order[2], a.id);
}

TEST(Backward, ForwardReplayIsDeterministic) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(7, 5, rng);
  const Matrix w = random_matrix(5, 3, rng);
  auto run = [&] {
    Tape t;
    BatchNormState s("bn", 3);
    Var y = softmax_rows(t, relu(t, batch_norm(t, affine(t, t.constant(x), t.constant(w)), s, Mode::kTrain)));
    return t.value(y);
  };
  EXPECT_EQ(run(), run());
}

TEST(LayerGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  const Matrix w = random_matrix(4, 3, rng);
  const Matrix other = random_matrix(5, 4, rng);
  BatchNormState bn("bn", 4);
  bn.gamma.value = random_matrix(1, 4, rng);
  bn.beta.value = random_matrix(1, 4, rng);
  bn.running_mean = random_matrix(1, 4, rng);
  bn.running_var = Matrix(1, 4, 1.7);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix mix = random_matrix(5, 2, rng);

  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return affine(t, v, t.constant(w)); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return relu(t, v); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return batch_norm(t, v, bn, Mode::kTrain, false); }, rng),
            1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return batch_norm(t, v, bn, Mode::kInfer); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return l2_normalize_rows(t, v); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return hadamard(t, v, t.constant(other)); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return softmax_rows(t, v); }, rng), 1e-4);
  EXPECT_LT(layer_grad_error(x, [&](Tape& t, Var v) { return fuse(t, {v, t.constant(other)}, t.constant(mix)); }, rng),
            1e-4);
}

TEST(GradCheck, AffineLogisticPasses) {
  std::mt19937_64 rng(4);
  Parameter w("W", random_matrix(4, 1, rng));
  Parameter b("b", random_matrix(1, 1, rng));
  const Matrix x = random_matrix(5, 4, rng);
  Matrix labels(5, 1);
  for (double& v : labels.data()) v = (rng() & 1) ? 1.0 : -1.0;
  LossFn fn = [&](bool with_backward) {
    Tape t;
    Var loss = logistic_loss(t, affine(t, t.constant(x), t.param(w), t.param(b)), labels);
    if (with_backward) t.backward(loss);
    return LossEval{t.value(loss)[0], t.kink_signature(), {}};
  };
  const GradCheckResult r = grad_check(fn, {&w, &b});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.checked, 5u);
}

TEST(GradCheck, ReluKinkCoordinatesAreSkipped) {
  // x W puts a ReLU input at exactly 0; perturbing W[0,0] crosses the kink.
  Parameter w("W", {{0.0}, {1.0}});
  const Matrix x{{1.0, 0.0}, {0.5, 2.0}};
  LossFn fn = [&](bool with_backward) {
    Tape t;
    Var loss = l1_norm(t, relu(t, affine(t, t.constant(x), t.param(w))));
    if (with_backward) t.backward(loss);
    return LossEval{t.value(loss)[0], t.kink_signature(), {}};
  };
  const GradCheckResult r = grad_check(fn, {&w});
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, NonFiniteLossIsNumericError) {
  Parameter w("W", {{1.0}});
  LossFn fn = [&](bool) { return LossEval{std::nan(""), 0, {}}; };
  EXPECT_THROW(grad_check(fn, {&w}), NumericError);
}

TEST(Kernels, ParallelMatchesSerialBitwise) {
  std::mt19937_64 rng(9);
  using kernels::Trans;
  for (auto [ta, tb] : {std::pair{Trans::kNo, Trans::kNo}, {Trans::kYes, Trans::kNo}, {Trans::kNo, Trans::kYes}}) {
    Matrix a = ta == Trans::kNo ? random_matrix(120, 70, rng) : random_matrix(70, 120, rng);
    Matrix b = tb == Trans::kNo ? random_matrix(70, 90, rng) : random_matrix(90, 70, rng);
    EXPECT_EQ(kernels::gemm(a, ta, b, tb), kernels::serial::gemm(a, ta, b, tb));
  }
  Matrix x = random_matrix(300, 200, rng);
  EXPECT_EQ(kernels::column_sums(x), kernels::serial::column_sums(x));
}

TEST(Kernels, GemmShapeMismatch) {
  EXPECT_THROW(kernels::gemm(Matrix(2, 3), kernels::Trans::kNo, Matrix(2, 2), kernels::Trans::kNo),
               DimensionError);
}
