#include <algorithm>
#include <cmath>

#include "nsfwguard/kernels.hpp"

namespace nsfwguard::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void pgd_step_scalar(float* x, const float* grad, const float* origin, float step, float radius,
                     std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    float s = grad[i] > 0.0f ? 1.0f : (grad[i] < 0.0f ? -1.0f : 0.0f);
    float v = x[i] + step * s;
    v = std::clamp(v, origin[i] - radius, origin[i] + radius);
    x[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

float max_abs_diff_scalar(const float* a, const float* b, std::size_t n) {
  float m = 0.0f;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Backend::kScalar, "scalar", dot_scalar, axpy_scalar,
                                 pgd_step_scalar, max_abs_diff_scalar};
  return table;
}

}  // namespace nsfwguard::kernels
