#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "nsfwguard/kernels.hpp"

namespace nsfwguard::kernels {
namespace {

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
  acc0 = _mm256_add_pd(acc0, acc1);
  __m128d lo = _mm256_castpd256_pd128(acc0);
  __m128d hi = _mm256_extractf128_pd(acc0, 1);
  lo = _mm_add_pd(lo, hi);
  double acc = _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void pgd_step_avx2(float* x, const float* grad, const float* origin, float step, float radius,
                   std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 vstep = _mm256_set1_ps(step);
  const __m256 neg_step = _mm256_set1_ps(-step);
  const __m256 vrad = _mm256_set1_ps(radius);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 g = _mm256_loadu_ps(grad + i);
    // sign(g) * step, zero where g == 0
    __m256 pos = _mm256_and_ps(_mm256_cmp_ps(g, zero, _CMP_GT_OQ), vstep);
    __m256 neg = _mm256_and_ps(_mm256_cmp_ps(g, zero, _CMP_LT_OQ), neg_step);
    __m256 v = _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_or_ps(pos, neg));
    __m256 o = _mm256_loadu_ps(origin + i);
    v = _mm256_max_ps(v, _mm256_sub_ps(o, vrad));
    v = _mm256_min_ps(v, _mm256_add_ps(o, vrad));
    v = _mm256_min_ps(_mm256_max_ps(v, zero), one);
    _mm256_storeu_ps(x + i, v);
  }
  for (; i < n; ++i) {
    float s = grad[i] > 0.0f ? 1.0f : (grad[i] < 0.0f ? -1.0f : 0.0f);
    float v = std::clamp(x[i] + step * s, origin[i] - radius, origin[i] + radius);
    x[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

float max_abs_diff_avx2(const float* a, const float* b, std::size_t n) {
  const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 m = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    m = _mm256_max_ps(m, _mm256_and_ps(d, abs_mask));
  }
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, m);
  float out = *std::max_element(lanes, lanes + 8);
  for (; i < n; ++i) out = std::max(out, std::fabs(a[i] - b[i]));
  return out;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Backend::kAvx2, "avx2", dot_avx2, axpy_avx2, pgd_step_avx2,
                                 max_abs_diff_avx2};
  return table;
}

}  // namespace nsfwguard::kernels
