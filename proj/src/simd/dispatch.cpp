#include <cassert>
#include <cstdlib>
#include <string>

#include "pagkd/error.hpp"
#include "pagkd/simd/kernels.hpp"

namespace pagkd::simd {
namespace {

bool cpu_has_avx2_fma() {
#if defined(PAGKD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* env = std::getenv("PAGKD_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return scalar_kernels();
    if (want == "avx2") {
      if (!isa_supported(Isa::kAvx2)) {
        throw ConfigError("PAGKD_SIMD=avx2 requested but the CPU lacks AVX2/FMA");
      }
      return kernels_for(Isa::kAvx2);
    }
    throw ConfigError("PAGKD_SIMD must be 'scalar' or 'avx2', got '" + want + "'");
  }
  return isa_supported(Isa::kAvx2) ? kernels_for(Isa::kAvx2) : scalar_kernels();
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2: {
      static const bool ok = cpu_has_avx2_fma();
      return ok;
    }
  }
  return false;
}

const KernelTable& kernels_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw ConfigError(std::string("kernel set not supported on this CPU: ") +
                      std::string(isa_name(isa)));
  }
#if defined(PAGKD_HAVE_AVX2)
  if (isa == Isa::kAvx2) return avx2_kernels();
#endif
  return scalar_kernels();
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() == m * k && b.size() == k * n && c.size() == m * n);
  active().gemm_nn(m, n, k, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() == m * k && b.size() == n * k && c.size() == m * n);
  active().gemm_nt(m, n, k, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() == k * m && b.size() == k * n && c.size() == m * n);
  active().gemm_tn(m, n, k, a.data(), b.data(), c.data());
}

}  // namespace pagkd::simd
