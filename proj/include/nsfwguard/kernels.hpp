#pragma once

// Dense inner loops shared by the encoders, the fusion block and the image
// attack. Every kernel has a scalar reference implementation; vector variants
// (AVX2+FMA on x86-64, NEON on aarch64) are picked at startup from the CPU
// feature set and can be pinned with NSFWGUARD_SIMD=scalar|avx2|neon|auto.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace nsfwguard::kernels {

enum class Backend { kScalar, kAvx2, kNeon };

struct KernelTable {
  Backend backend;
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x <- clip(clip(x + step * sign(grad), origin - radius, origin + radius), 0, 1)
  void (*pgd_step)(float* x, const float* grad, const float* origin, float step,
                   float radius, std::size_t n);
  float (*max_abs_diff)(const float* a, const float* b, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(NSFWGUARD_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(NSFWGUARD_HAVE_NEON)
const KernelTable& neon_table();
#endif

/// Backends compiled in and supported by the running CPU; scalar is always first.
std::vector<Backend> available_backends();

/// Table of an available backend. Throws ConfigError otherwise.
const KernelTable& table(Backend backend);

/// The table currently used by the library.
const KernelTable& active();

/// Pins a backend. Throws ConfigError if it is not available here.
void select(Backend backend);

/// Re-runs CPU detection (honouring NSFWGUARD_SIMD).
void select_auto();

std::string_view backend_name(Backend backend);

// Convenience wrappers over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace nsfwguard::kernels
