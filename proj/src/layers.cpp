#include "cite/layers.hpp"

#include <algorithm>
#include <cmath>

#include "cite/error.hpp"
#include "cite/kernels.hpp"

namespace cite {

using kernels::Trans;

BatchNormState::BatchNormState(const std::string& prefix, std::size_t width)
    : gamma(prefix + ".gamma", Matrix(1, width, 1.0)),
      beta(prefix + ".beta", Matrix(1, width, 0.0)),
      running_mean(1, width, 0.0),
      running_var(1, width, 1.0) {}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Var affine(Tape& t, Var x, Var w, std::optional<Var> b) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  if (xv.cols() != wv.rows()) {
    throw DimensionError("affine: input " + xv.shape_string() + " vs weight " + wv.shape_string());
  }
  Matrix out = kernels::gemm(xv, Trans::kNo, wv, Trans::kNo);
  if (b) kernels::add_row_vector(out, t.value(*b));
  auto backward = [x, w, b](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    if (tp.requires_grad(x)) {
      kernels::gemm_accumulate(dy, Trans::kNo, tp.value(w), Trans::kYes, tp.grad_buffer(x));
    }
    if (tp.requires_grad(w)) {
      kernels::gemm_accumulate(tp.value(x), Trans::kYes, dy, Trans::kNo, tp.grad_buffer(w));
    }
    if (b && tp.requires_grad(*b)) {
      Matrix db = kernels::column_sums(dy);
      Matrix& g = tp.grad_buffer(*b);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += db[j];
    }
  };
  if (b) return t.record(OpKind::kAffine, std::move(out), {x, w, *b}, backward);
  return t.record(OpKind::kAffine, std::move(out), {x, w}, backward);
}

Var relu(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  t.mix_kink(xv);
  Matrix out = xv;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(OpKind::kRelu, std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    const Matrix& xv = tp.value(x);
    Matrix& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xv[i] > 0.0 ? dy[i] : 0.0;
  });
}

Var batch_norm(Tape& t, Var x, BatchNormState& s, Mode mode, bool update_running) {
  // Record gamma/beta first: appending nodes may move earlier values.
  Var gamma = t.param(s.gamma);
  Var beta = t.param(s.beta);
  const Matrix& xv = t.value(x);
  const std::size_t n = xv.rows();
  const std::size_t m = xv.cols();
  if (s.gamma.value.cols() != m) {
    throw DimensionError("batch_norm: input " + xv.shape_string() + " for width " +
                         std::to_string(s.gamma.value.cols()));
  }
  if (!(s.eps > 0.0)) throw ValidationError("batch_norm: eps must be positive");

  if (mode == Mode::kInfer) {
    Matrix scale(1, m);
    for (std::size_t c = 0; c < m; ++c) scale[c] = 1.0 / std::sqrt(s.running_var[c] + s.eps);
    Matrix xhat(n, m);
    Matrix out(n, m);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        xhat(r, c) = (xv(r, c) - s.running_mean[c]) * scale[c];
        out(r, c) = s.gamma.value[c] * xhat(r, c) + s.beta.value[c];
      }
    }
    return t.record(OpKind::kBatchNorm, std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat), scale](Tape& tp, std::size_t self) {
                      const Matrix& dy = tp.grad_buffer(Var{self});
                      const Matrix& g = tp.value(gamma);
                      const std::size_t rows = dy.rows(), cols = dy.cols();
                      if (tp.requires_grad(x)) {
                        Matrix& dx = tp.grad_buffer(x);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < cols; ++c) dx(r, c) += dy(r, c) * g[c] * scale[c];
                      }
                      Matrix& dg = tp.grad_buffer(gamma);
                      Matrix& db = tp.grad_buffer(beta);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) {
                          dg[c] += dy(r, c) * xhat(r, c);
                          db[c] += dy(r, c);
                        }
                      }
                    });
  }

  if (n < 2) {
    throw ValidationError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
  }
  Matrix mean(1, m);
  Matrix var(1, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) mean[c] += xv(r, c);
  for (std::size_t c = 0; c < m; ++c) mean[c] /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      const double d = xv(r, c) - mean[c];
      var[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < m; ++c) var[c] /= static_cast<double>(n);

  Matrix inv_std(1, m);
  for (std::size_t c = 0; c < m; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + s.eps);
  Matrix xhat(n, m);
  Matrix out(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      xhat(r, c) = (xv(r, c) - mean[c]) * inv_std[c];
      out(r, c) = s.gamma.value[c] * xhat(r, c) + s.beta.value[c];
    }
  }
  if (update_running) {
    for (std::size_t c = 0; c < m; ++c) {
      s.running_mean[c] = (1.0 - s.momentum) * s.running_mean[c] + s.momentum * mean[c];
      s.running_var[c] = (1.0 - s.momentum) * s.running_var[c] + s.momentum * var[c];
    }
  }
  return t.record(
      OpKind::kBatchNorm, std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std](Tape& tp, std::size_t self) {
        const Matrix& dy = tp.grad_buffer(Var{self});
        const Matrix& g = tp.value(gamma);
        const std::size_t rows = dy.rows(), cols = dy.cols();
        const double inv_n = 1.0 / static_cast<double>(rows);
        Matrix& dg = tp.grad_buffer(gamma);
        Matrix& db = tp.grad_buffer(beta);
        Matrix sum_dxhat(1, cols);
        Matrix sum_dxhat_xhat(1, cols);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            dg[c] += dy(r, c) * xhat(r, c);
            db[c] += dy(r, c);
            const double dxh = dy(r, c) * g[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * xhat(r, c);
          }
        }
        if (!tp.requires_grad(x)) return;
        Matrix& dx = tp.grad_buffer(x);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxh = dy(r, c) * g[c];
            dx(r, c) += inv_std[c] * (dxh - inv_n * sum_dxhat[c] -
                                      inv_n * xhat(r, c) * sum_dxhat_xhat[c]);
          }
        }
      });
}

Var l2_normalize_rows(Tape& t, Var x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("l2_normalize_rows: eps must be positive");
  const Matrix& xv = t.value(x);
  Matrix out(xv.rows(), xv.cols());
  Matrix denom(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ss = 0.0;
    for (double v : xv.row(r)) ss += v * v;
    const double norm = std::sqrt(ss);
    // Negative denom marks rows that went through the eps guard.
    denom[r] = norm >= eps ? norm : -eps;
    const double d = std::abs(denom[r]);
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / d;
  }
  return t.record(OpKind::kL2Normalize, std::move(out), {x}, [x, denom](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    const Matrix& y = tp.value(Var{self});
    Matrix& dx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      if (denom[r] < 0.0) {
        for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, c) += dy(r, c) / -denom[r];
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < dy.cols(); ++c) dot += y(r, c) * dy(r, c);
      for (std::size_t c = 0; c < dy.cols(); ++c) {
        dx(r, c) += (dy(r, c) - y(r, c) * dot) / denom[r];
      }
    }
  });
}

Var hadamard(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "hadamard");
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(OpKind::kHadamard, std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    if (tp.requires_grad(a)) {
      const Matrix& bv = tp.value(b);
      Matrix& da = tp.grad_buffer(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      const Matrix& av = tp.value(a);
      Matrix& db = tp.grad_buffer(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var softmax_rows(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out(r, c) = std::exp(in[c] - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < in.size(); ++c) out(r, c) /= z;
  }
  return t.record(OpKind::kSoftmax, std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    const Matrix& y = tp.value(Var{self});
    Matrix& dx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (dy(r, c) - dot);
    }
  });
}

Var fuse(Tape& t, const std::vector<Var>& cond, Var u) {
  const Matrix& uv = t.value(u);
  if (cond.empty() || uv.cols() != cond.size()) {
    throw DimensionError("fuse: " + std::to_string(cond.size()) + " embeddings vs weights " +
                         uv.shape_string());
  }
  const Matrix& c0 = t.value(cond[0]);
  if (uv.rows() != c0.rows()) {
    throw DimensionError("fuse: weights " + uv.shape_string() + " vs embedding " + c0.shape_string());
  }
  Matrix out(c0.rows(), c0.cols());
  for (std::size_t k = 0; k < cond.size(); ++k) {
    const Matrix& ck = t.value(cond[k]);
    require_same_shape(ck, c0, "fuse");
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const double w = uv(r, k);
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += w * ck(r, c);
    }
  }
  auto backward = [cond, u](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_buffer(Var{self});
    const Matrix& uv = tp.value(u);
    for (std::size_t k = 0; k < cond.size(); ++k) {
      const Matrix& ck = tp.value(cond[k]);
      if (tp.requires_grad(cond[k])) {
        Matrix& dc = tp.grad_buffer(cond[k]);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < dy.cols(); ++c) dc(r, c) += uv(r, k) * dy(r, c);
      }
      if (tp.requires_grad(u)) {
        Matrix& du = tp.grad_buffer(u);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dy.cols(); ++c) acc += ck(r, c) * dy(r, c);
          du(r, k) += acc;
        }
      }
    }
  };
  std::vector<Var> inputs = cond;
  inputs.push_back(u);
  return t.record(OpKind::kFuse, std::move(out), inputs, backward);
}

Var logistic_loss(Tape& t, Var scores, const Matrix& labels, const Matrix* mask) {
  const Matrix& x = t.value(scores);
  require_same_shape(x, labels, "logistic_loss");
  if (mask != nullptr) require_same_shape(x, *mask, "logistic_loss mask");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = labels[i];
    if (y != 1.0 && y != -1.0) {
      throw ValidationError("logistic_loss: label " + std::to_string(y) + " at " +
                            std::to_string(i) + " is not +1/-1");
    }
    if (mask != nullptr && (*mask)[i] == 0.0) continue;
    total += softplus(-y * x[i]);
  }
  Matrix m = mask != nullptr ? *mask : Matrix(x.rows(), x.cols(), 1.0);
  return t.record(OpKind::kLogisticLoss, Matrix(1, 1, total), {scores},
                  [scores, labels, m = std::move(m)](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(Var{self})[0];
                    const Matrix& x = tp.value(scores);
                    Matrix& dx = tp.grad_buffer(scores);
                    for (std::size_t i = 0; i < x.size(); ++i) {
                      if (m[i] == 0.0) continue;
                      const double y = labels[i];
                      dx[i] += g * -y * sigmoid(-y * x[i]);
                    }
                  });
}

Var l1_norm(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  t.mix_kink(xv);
  double total = 0.0;
  for (double v : xv.data()) total += std::abs(v);
  return t.record(OpKind::kL1Norm, Matrix(1, 1, total), {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(Var{self})[0];
    const Matrix& xv = tp.value(x);
    Matrix& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      dx[i] += xv[i] > 0.0 ? g : (xv[i] < 0.0 ? -g : 0.0);
    }
  });
}

Var add_scaled(Tape& t, Var a, Var b, double scale) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.size() != 1 || bv.size() != 1) throw DimensionError("add_scaled: operands must be 1x1");
  return t.record(OpKind::kAddScaled, Matrix(1, 1, av[0] + scale * bv[0]), {a, b},
                  [a, b, scale](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(Var{self})[0];
                    if (tp.requires_grad(a)) tp.grad_buffer(a)[0] += g;
                    if (tp.requires_grad(b)) tp.grad_buffer(b)[0] += scale * g;
                  });
}

}  // namespace cite
