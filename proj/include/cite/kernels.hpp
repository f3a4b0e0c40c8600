#pragma once

#include "cite/matrix.hpp"

// Dense kernels used by the differentiable layers. Each kernel has an
// OpenMP-parallel version (the default) and a serial reference kept for
// testing and benchmarking. The parallel versions split work over output
// rows only, so every output element is accumulated in the same order as
// the serial version and results are bitwise identical.
namespace cite::kernels {

enum class Trans { kNo, kYes };

// C = op(A) * op(B). Shapes are checked; DimensionError on mismatch.
Matrix gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb);
// Adds op(A) * op(B) into `c`.
void gemm_accumulate(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c);

// out[i, :] = x[i, :] + bias
void add_row_vector(Matrix& x, const Matrix& bias);
// Column sums of x as a 1 x cols row.
Matrix column_sums(const Matrix& x);

namespace serial {
Matrix gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb);
void gemm_accumulate(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c);
Matrix column_sums(const Matrix& x);
}  // namespace serial

}  // namespace cite::kernels
