#include "kernels.hpp"

#include <cmath>
#include <cstddef>

namespace palt::kernels {
namespace {

constexpr std::int64_t kTileRows = 4;
constexpr std::int64_t kTileCols = 32;

inline void store(double* out, double value, bool accumulate) {
  *out = accumulate ? *out + value : value;
}

// Scalar path for tile remainders; same summation order as the tiled path.
void gemm_edge(std::int64_t row_begin, std::int64_t row_end, std::int64_t col_begin,
               std::int64_t col_end, std::int64_t n, std::int64_t k, const double* a,
               const double* b, double* c, bool accumulate) {
  for (std::int64_t i = row_begin; i < row_end; ++i) {
    for (std::int64_t j = col_begin; j < col_end; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        s = std::fma(a[i * k + p], b[p * n + j], s);
      }
      store(&c[i * n + j], s, accumulate);
    }
  }
}

}  // namespace

void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
          double* c, bool accumulate) {
  const std::int64_t full_rows = m - m % kTileRows;
  const std::int64_t full_cols = n - n % kTileCols;
  for (std::int64_t i = 0; i < full_rows; i += kTileRows) {
    for (std::int64_t j = 0; j < full_cols; j += kTileCols) {
      double tile[kTileRows][kTileCols] = {};
      for (std::int64_t p = 0; p < k; ++p) {
        const double* brow = b + p * n + j;
        for (std::int64_t r = 0; r < kTileRows; ++r) {
          const double av = a[(i + r) * k + p];
          for (std::int64_t q = 0; q < kTileCols; ++q) {
            tile[r][q] = std::fma(av, brow[q], tile[r][q]);
          }
        }
      }
      for (std::int64_t r = 0; r < kTileRows; ++r) {
        double* crow = c + (i + r) * n + j;
        for (std::int64_t q = 0; q < kTileCols; ++q) store(&crow[q], tile[r][q], accumulate);
      }
    }
    if (full_cols < n) gemm_edge(i, i + kTileRows, full_cols, n, n, k, a, b, c, accumulate);
  }
  if (full_rows < m) gemm_edge(full_rows, m, 0, n, n, k, a, b, c, accumulate);
}

void transpose(std::int64_t rows, std::int64_t cols, const double* src, double* dst) {
  constexpr std::int64_t kBlock = 32;
  for (std::int64_t i0 = 0; i0 < rows; i0 += kBlock) {
    for (std::int64_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::int64_t i1 = i0 + kBlock < rows ? i0 + kBlock : rows;
      const std::int64_t j1 = j0 + kBlock < cols ? j0 + kBlock : cols;
      for (std::int64_t i = i0; i < i1; ++i) {
        for (std::int64_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

}  // namespace palt::kernels
