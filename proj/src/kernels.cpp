#include "cite/kernels.hpp"

#include <algorithm>

#include "cite/error.hpp"
#include "cite/parallel.hpp"

namespace cite::kernels {

namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

struct GemmShape {
  std::size_t m, k, n;
};

GemmShape check_gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb) {
  const std::size_t m = ta == Trans::kNo ? a.rows() : a.cols();
  const std::size_t k = ta == Trans::kNo ? a.cols() : a.rows();
  const std::size_t kb = tb == Trans::kNo ? b.rows() : b.cols();
  const std::size_t n = tb == Trans::kNo ? b.cols() : b.rows();
  if (k != kb) {
    throw DimensionError("gemm: inner dimensions " + a.shape_string() + " and " +
                         b.shape_string() + " do not agree");
  }
  return {m, k, n};
}

inline double elem(const Matrix& x, Trans t, std::size_t i, std::size_t j) {
  return t == Trans::kNo ? x(i, j) : x(j, i);
}

// One output row; accumulation over the inner index runs in ascending order
// for every output element, matching the serial reference exactly.
void gemm_row(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, std::size_t i,
              const GemmShape& s) {
  double* out = c.row(i).data();
  if (tb == Trans::kNo) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const double aip = elem(a, ta, i, p);
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < s.n; ++j) out[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b.row(j).data();
      double acc = out[j];
      for (std::size_t p = 0; p < s.k; ++p) acc += elem(a, ta, i, p) * brow[p];
      out[j] = acc;
    }
  }
}

}  // namespace

void gemm_accumulate(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c) {
  const GemmShape s = check_gemm(a, ta, b, tb);
  if (c.rows() != s.m || c.cols() != s.n) {
    throw DimensionError("gemm: output shape " + c.shape_string() + " expected " +
                         std::to_string(s.m) + "x" + std::to_string(s.n));
  }
  const bool go_parallel = s.m > 1 && s.m * s.k * s.n >= kParallelWork;
  const long long rows = static_cast<long long>(s.m);
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(thread_count())
  for (long long i = 0; i < rows; ++i) {
    gemm_row(a, ta, b, tb, c, static_cast<std::size_t>(i), s);
  }
}

Matrix gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb) {
  const GemmShape s = check_gemm(a, ta, b, tb);
  Matrix c(s.m, s.n);
  gemm_accumulate(a, ta, b, tb, c);
  return c;
}

void add_row_vector(Matrix& x, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row_vector: bias " + bias.shape_string() + " for input " +
                         x.shape_string());
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] += bias[c];
  }
}

Matrix column_sums(const Matrix& x) {
  Matrix out(1, x.cols());
  const long long cols = static_cast<long long>(x.cols());
  const bool go_parallel = x.size() >= kParallelWork;
  // Threads own column blocks and walk rows inside them: same summation
  // order as the serial loop, without the strided reads.
  constexpr long long kBlock = 64;
  const long long blocks = (cols + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(thread_count())
  for (long long b = 0; b < blocks; ++b) {
    const std::size_t c0 = static_cast<std::size_t>(b * kBlock);
    const std::size_t c1 = std::min(x.cols(), c0 + static_cast<std::size_t>(kBlock));
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = c0; c < c1; ++c) out[c] += x(r, c);
  }
  return out;
}

namespace serial {

void gemm_accumulate(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c) {
  const GemmShape s = check_gemm(a, ta, b, tb);
  if (c.rows() != s.m || c.cols() != s.n) throw DimensionError("gemm: output shape mismatch");
  for (std::size_t i = 0; i < s.m; ++i)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t p = 0; p < s.k; ++p) c(i, j) += elem(a, ta, i, p) * elem(b, tb, p, j);
}

Matrix gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb) {
  const GemmShape s = check_gemm(a, ta, b, tb);
  Matrix c(s.m, s.n);
  serial::gemm_accumulate(a, ta, b, tb, c);
  return c;
}

Matrix column_sums(const Matrix& x) {
  Matrix out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  return out;
}

}  // namespace serial

}  // namespace cite::kernels
