#pragma once

// Thin overload set over CBLAS gemm, row-major.

#include <cblas.h>

#include <cstddef>

namespace xtalk::blas {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Double precision only backs the gradient checks. OpenBLAS 0.3.20's
// SkylakeX/Cooperlake dgemm kernel returns wrong products at moderate sizes
// (e.g. 4x288 by 288x3840), so this path uses a plain loop instead.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) ci[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) ci[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const double av = alpha * (trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                                         : a[static_cast<std::ptrdiff_t>(i) * lda + p]);
      if (av == 0.0) continue;
      if (trans_b) {
        for (int j = 0; j < n; ++j) ci[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      } else {
        const double* bp = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  }
}

}  // namespace xtalk::blas
