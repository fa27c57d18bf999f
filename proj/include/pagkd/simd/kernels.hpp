#pragma once

// Dense float64 kernels behind every matrix-shaped op in the tensor engine.
//
// Each kernel has a scalar reference implementation and, where the target
// supports it, an AVX2+FMA variant. The variant is chosen once per process
// from the CPU feature set; PAGKD_SIMD=scalar|avx2 overrides the choice.
// All matrices are row-major and densely packed.

#include <cstddef>
#include <span>
#include <string_view>

namespace pagkd::simd {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
};

const KernelTable& scalar_kernels();
#if defined(PAGKD_HAVE_AVX2)
const KernelTable& avx2_kernels();
#endif

bool isa_supported(Isa isa);
const KernelTable& kernels_for(Isa isa);
std::string_view isa_name(Isa isa);

// Table selected for this process.
const KernelTable& active();

// Span conveniences over the active table.
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

}  // namespace pagkd::simd
