#include <atomic>
#include <cstdlib>
#include <string>

#include "nsfwguard/error.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard::kernels {
namespace {

bool cpu_supports(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(NSFWGUARD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::kNeon:
#if defined(NSFWGUARD_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_for(Backend backend) {
  switch (backend) {
#if defined(NSFWGUARD_HAVE_AVX2)
    case Backend::kAvx2:
      return avx2_table();
#endif
#if defined(NSFWGUARD_HAVE_NEON)
    case Backend::kNeon:
      return neon_table();
#endif
    default:
      return scalar_table();
  }
}

const KernelTable* detect() {
  const char* env = std::getenv("NSFWGUARD_SIMD");
  std::string want = env ? env : "auto";
  if (want == "scalar") return &scalar_table();
  if (want == "avx2" && cpu_supports(Backend::kAvx2)) return &table_for(Backend::kAvx2);
  if (want == "neon" && cpu_supports(Backend::kNeon)) return &table_for(Backend::kNeon);
  if (cpu_supports(Backend::kAvx2)) return &table_for(Backend::kAvx2);
  if (cpu_supports(Backend::kNeon)) return &table_for(Backend::kNeon);
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

std::vector<Backend> available_backends() {
  std::vector<Backend> out{Backend::kScalar};
  for (Backend b : {Backend::kAvx2, Backend::kNeon}) {
    if (cpu_supports(b)) out.push_back(b);
  }
  return out;
}

const KernelTable& table(Backend backend) {
  if (!cpu_supports(backend)) {
    throw ConfigError("SIMD backend " + std::string(backend_name(backend)) +
                      " is not available on this machine");
  }
  return table_for(backend);
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Backend backend) {
  current().store(&table(backend), std::memory_order_release);
}

void select_auto() { current().store(detect(), std::memory_order_release); }

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
    case Backend::kNeon:
      return "neon";
  }
  return "unknown";
}

}  // namespace nsfwguard::kernels
