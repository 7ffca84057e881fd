#include <arm_neon.h>

#include <algorithm>
#include <cmath>

#include "nsfwguard/kernels.hpp"

namespace nsfwguard::kernels {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void pgd_step_neon(float* x, const float* grad, const float* origin, float step, float radius,
                   std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  const float32x4_t one = vdupq_n_f32(1.0f);
  const float32x4_t vstep = vdupq_n_f32(step);
  const float32x4_t vrad = vdupq_n_f32(radius);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float32x4_t g = vld1q_f32(grad + i);
    uint32x4_t gt = vcgtq_f32(g, zero);
    uint32x4_t lt = vcltq_f32(g, zero);
    float32x4_t s = vbslq_f32(gt, vstep, vbslq_f32(lt, vnegq_f32(vstep), zero));
    float32x4_t v = vaddq_f32(vld1q_f32(x + i), s);
    float32x4_t o = vld1q_f32(origin + i);
    v = vminq_f32(vmaxq_f32(v, vsubq_f32(o, vrad)), vaddq_f32(o, vrad));
    vst1q_f32(x + i, vminq_f32(vmaxq_f32(v, zero), one));
  }
  for (; i < n; ++i) {
    float s = grad[i] > 0.0f ? 1.0f : (grad[i] < 0.0f ? -1.0f : 0.0f);
    float v = std::clamp(x[i] + step * s, origin[i] - radius, origin[i] + radius);
    x[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

float max_abs_diff_neon(const float* a, const float* b, std::size_t n) {
  float32x4_t m = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) m = vmaxq_f32(m, vabdq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  float out = vmaxvq_f32(m);
  for (; i < n; ++i) out = std::max(out, std::fabs(a[i] - b[i]));
  return out;
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable table{Backend::kNeon, "neon", dot_neon, axpy_neon, pgd_step_neon,
                                 max_abs_diff_neon};
  return table;
}

}  // namespace nsfwguard::kernels
