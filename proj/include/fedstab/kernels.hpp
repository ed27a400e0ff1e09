#pragma once

// Dense vector kernels used by the training inner loops.
//
// Every kernel has a scalar reference implementation and, where the target
// supports it, an AVX2 (x86-64) or NEON (aarch64) variant chosen at runtime.
// All variants are required to be bitwise identical to the scalar reference:
// elementwise kernels never fuse multiply-add, and reductions follow one
// canonical order (four interleaved partial sums over full blocks of four,
// combined as (s0 + s1) + (s2 + s3), then the tail added left to right).

#include <cstddef>
#include <span>
#include <string_view>

namespace fedstab::simd {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
  Backend backend;
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x[i] *= a
  void (*scale)(double a, double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i (x[i] - y[i])^2
  double (*squared_distance)(const double* x, const double* y, std::size_t n);
};

const KernelTable& scalar_kernels();

// Returns nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best available backend, unless overridden by FEDSTAB_SIMD=scalar|avx2|neon.
const KernelTable& active_kernels();

// Pins the active backend (tests and benchmarks). Returns false if the backend
// is unavailable on this machine.
bool set_backend(Backend backend);

std::string_view backend_name(Backend backend);

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active_kernels().axpy(a, x.data(), y.data(), y.size());
}

inline void scale(double a, std::span<double> x) {
  active_kernels().scale(a, x.data(), x.size());
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active_kernels().dot(x.data(), y.data(), x.size());
}

inline double squared_distance(std::span<const double> x,
                               std::span<const double> y) {
  return active_kernels().squared_distance(x.data(), y.data(), x.size());
}

}  // namespace fedstab::simd
