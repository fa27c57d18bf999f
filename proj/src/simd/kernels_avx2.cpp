// Compiled with -mavx2 -mfma; only reached when the CPU reports both.

#include <immintrin.h>

#include "pagkd/simd/kernels.hpp"

namespace pagkd::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x8 register tile: rows i..i+3 of C, columns j..j+7.
inline void tile_4x8(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     std::size_t i, std::size_t j) {
  double* c0 = c + (i + 0) * n + j;
  double* c1 = c + (i + 1) * n + j;
  double* c2 = c + (i + 2) * n + j;
  double* c3 = c + (i + 3) * n + j;
  __m256d r00 = _mm256_loadu_pd(c0), r01 = _mm256_loadu_pd(c0 + 4);
  __m256d r10 = _mm256_loadu_pd(c1), r11 = _mm256_loadu_pd(c1 + 4);
  __m256d r20 = _mm256_loadu_pd(c2), r21 = _mm256_loadu_pd(c2 + 4);
  __m256d r30 = _mm256_loadu_pd(c3), r31 = _mm256_loadu_pd(c3 + 4);
  const double* a0 = a + (i + 0) * k;
  const double* a1 = a + (i + 1) * k;
  const double* a2 = a + (i + 2) * k;
  const double* a3 = a + (i + 3) * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    r00 = _mm256_fmadd_pd(av, b0, r00);
    r01 = _mm256_fmadd_pd(av, b1, r01);
    av = _mm256_broadcast_sd(a1 + p);
    r10 = _mm256_fmadd_pd(av, b0, r10);
    r11 = _mm256_fmadd_pd(av, b1, r11);
    av = _mm256_broadcast_sd(a2 + p);
    r20 = _mm256_fmadd_pd(av, b0, r20);
    r21 = _mm256_fmadd_pd(av, b1, r21);
    av = _mm256_broadcast_sd(a3 + p);
    r30 = _mm256_fmadd_pd(av, b0, r30);
    r31 = _mm256_fmadd_pd(av, b1, r31);
  }
  _mm256_storeu_pd(c0, r00);
  _mm256_storeu_pd(c0 + 4, r01);
  _mm256_storeu_pd(c1, r10);
  _mm256_storeu_pd(c1 + 4, r11);
  _mm256_storeu_pd(c2, r20);
  _mm256_storeu_pd(c2 + 4, r21);
  _mm256_storeu_pd(c3, r30);
  _mm256_storeu_pd(c3 + 4, r31);
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  const std::size_t m4 = m - m % 4;
  const std::size_t n8 = n - n % 8;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) tile_4x8(n, k, a, b, c, i, j);
  }
  // Column remainder for the tiled rows, then leftover rows in full.
  if (n8 < n) {
    for (std::size_t i = 0; i < m4; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        for (std::size_t j = n8; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
      }
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(a[i * k + p], b + p * n, c + i * n, n);
  }
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
  }
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) axpy_avx2(a[p * m + i], brow, c + i * n, n);
  }
}

}  // namespace

const KernelTable& avx2_kernels() {
  static const KernelTable table{Isa::kAvx2, dot_avx2, axpy_avx2, gemm_nn_avx2, gemm_nt_avx2,
                                 gemm_tn_avx2};
  return table;
}

}  // namespace pagkd::simd
