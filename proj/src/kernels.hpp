#pragma once

#include <cstdint>

// Dense kernels behind the tensor ops. Row-major throughout. Every output
// element is accumulated over k in increasing order with fused multiply-add,
// so a row's result does not depend on how many other rows are computed
// alongside it.
namespace palt::kernels {

/// C[M,N] = A[M,K] * B[K,N], or C += A * B when accumulate is set.
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
          double* c, bool accumulate);

/// dst[cols, rows] = transpose of src[rows, cols].
void transpose(std::int64_t rows, std::int64_t cols, const double* src, double* dst);

}  // namespace palt::kernels
