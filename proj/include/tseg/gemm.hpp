#pragma once

#include <cstddef>

#ifdef TSEG_USE_CBLAS
#include <cblas.h>
#endif

namespace tseg {

// Row-major C[MxN] (+)= A[MxK] * B[KxN], optionally transposing A or B.
// Backed by BLAS when available; the fallback is a blocked scalar kernel
// kept for builds without a BLAS and for cross-checking in tests.
inline void gemm_fallback(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                          double alpha, const double* a, std::size_t lda, const double* b,
                          std::size_t ldb, double beta, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        if (beta == 0.0) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        } else if (beta != 1.0) {
            for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : b + p * ldb;
            if (!trans_b) {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
            }
        }
    }
}

inline void gemm_fallback(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                          float alpha, const float* a, std::size_t lda, const float* b,
                          std::size_t ldb, float beta, float* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * ldc;
        if (beta == 0.0f) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0f;
        } else if (beta != 1.0f) {
            for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const float av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
            if (av == 0.0f) continue;
            if (!trans_b) {
                const float* brow = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
            }
        }
    }
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
                 double beta, double* c, std::size_t ldc) {
#ifdef TSEG_USE_CBLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
#else
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
#ifdef TSEG_USE_CBLAS
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
#else
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

}  // namespace tseg
