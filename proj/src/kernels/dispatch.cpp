#include <atomic>
#include <cstdlib>
#include <string>

#include "fedstab/kernels.hpp"

namespace fedstab::simd {

#ifdef FEDSTAB_HAVE_AVX2
const KernelTable& avx2_table();
#endif
#ifdef FEDSTAB_HAVE_NEON
const KernelTable& neon_table();
#endif

const KernelTable* avx2_kernels() {
#ifdef FEDSTAB_HAVE_AVX2
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#ifdef FEDSTAB_HAVE_NEON
  return &neon_table();
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* lookup(Backend backend) {
  switch (backend) {
    case Backend::scalar: return &scalar_kernels();
    case Backend::avx2: return avx2_kernels();
    case Backend::neon: return neon_kernels();
  }
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("FEDSTAB_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && avx2_kernels()) return avx2_kernels();
    if (want == "neon" && neon_kernels()) return neon_kernels();
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  if (const KernelTable* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

const KernelTable& active_kernels() {
  return *active_slot().load(std::memory_order_relaxed);
}

bool set_backend(Backend backend) {
  const KernelTable* table = lookup(backend);
  if (table == nullptr) return false;
  active_slot().store(table, std::memory_order_relaxed);
  return true;
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

}  // namespace fedstab::simd
