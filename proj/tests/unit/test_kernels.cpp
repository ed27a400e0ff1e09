#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedstab/kernels.hpp"
#include "fedstab/rng.hpp"

namespace fedstab::simd {
namespace {

std::vector<double> random_vector(std::size_t n, std::uint32_t id, double scale = 1.0) {
  CounterStream s(99, Purpose::probes, id);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * s.normal();
  return v;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

// Reference reduction written out independently of the kernels.
double canonical_dot(const std::vector<double>& x, const std::vector<double>& y) {
  double part[4] = {0, 0, 0, 0};
  const std::size_t blocks = x.size() / 4;
  for (std::size_t b = 0; b < blocks; ++b) {
    for (int l = 0; l < 4; ++l) part[l] = part[l] + x[4 * b + l] * y[4 * b + l];
  }
  double total = (part[0] + part[1]) + (part[2] + part[3]);
  for (std::size_t i = 4 * blocks; i < x.size(); ++i) total = total + x[i] * y[i];
  return total;
}

class VariantTest : public ::testing::TestWithParam<Backend> {
 protected:
  const KernelTable* variant() const {
    return GetParam() == Backend::avx2 ? avx2_kernels() : neon_kernels();
  }
};

TEST_P(VariantTest, MatchesScalarBitwise) {
  const KernelTable* v = variant();
  if (!v) GTEST_SKIP() << backend_name(GetParam()) << " not available here";
  const KernelTable& s = scalar_kernels();
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 50u, 255u, 1024u, 1031u}) {
    const auto x = random_vector(n, static_cast<std::uint32_t>(n), 3.0);
    const auto y = random_vector(n, static_cast<std::uint32_t>(n + 5000), 1e-3);
    EXPECT_TRUE(same_bits(s.dot(x.data(), y.data(), n), v->dot(x.data(), y.data(), n))) << n;
    EXPECT_TRUE(same_bits(s.squared_distance(x.data(), y.data(), n),
                          v->squared_distance(x.data(), y.data(), n)))
        << n;
    auto ys = y, yv = y;
    s.axpy(-0.37, x.data(), ys.data(), n);
    v->axpy(-0.37, x.data(), yv.data(), n);
    for (std::size_t i = 0; i < n; ++i) ASSERT_TRUE(same_bits(ys[i], yv[i])) << n << " " << i;
    auto xs = x, xv = x;
    s.scale(1.0 / 7.0, xs.data(), n);
    v->scale(1.0 / 7.0, xv.data(), n);
    for (std::size_t i = 0; i < n; ++i) ASSERT_TRUE(same_bits(xs[i], xv[i])) << n << " " << i;
  }
}

TEST_P(VariantTest, HostileCancellationStillBitwise) {
  const KernelTable* v = variant();
  if (!v) GTEST_SKIP() << backend_name(GetParam()) << " not available here";
  std::vector<double> x(103), y(103, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = (i % 7 == 0 ? 1e16 : 0.0) - (i % 11 == 0 ? 1e16 : 0.0) + static_cast<double>(i) * 1e-3;
  }
  EXPECT_TRUE(same_bits(scalar_kernels().dot(x.data(), y.data(), x.size()),
                        v->dot(x.data(), y.data(), x.size())));
}

INSTANTIATE_TEST_SUITE_P(Simd, VariantTest, ::testing::Values(Backend::avx2, Backend::neon),
                         [](const auto& info) { return std::string(backend_name(info.param)); });

TEST(ScalarKernels, ReductionOrderIsCanonical) {
  for (std::size_t n : {3u, 4u, 13u, 64u, 101u}) {
    const auto x = random_vector(n, 1, 5.0);
    const auto y = random_vector(n, 2, 0.1);
    EXPECT_TRUE(same_bits(scalar_kernels().dot(x.data(), y.data(), n), canonical_dot(x, y)));
  }
}

TEST(ScalarKernels, SmallValuesByHand) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 0, -1, 0.5, 4};
  EXPECT_DOUBLE_EQ(scalar_kernels().dot(x.data(), y.data(), 5), 2 - 3 + 2 + 20);
  EXPECT_DOUBLE_EQ(scalar_kernels().squared_distance(x.data(), y.data(), 5), 1 + 4 + 16 + 12.25 + 1);
  std::vector<double> z = y;
  scalar_kernels().axpy(2.0, x.data(), z.data(), 5);
  EXPECT_EQ(z, (std::vector<double>{4, 4, 5, 8.5, 14}));
}

TEST(Dispatch, PinningBackends) {
  EXPECT_TRUE(set_backend(Backend::scalar));
  EXPECT_EQ(active_kernels().backend, Backend::scalar);
  if (avx2_kernels()) {
    EXPECT_TRUE(set_backend(Backend::avx2));
    EXPECT_EQ(active_kernels().backend, Backend::avx2);
  } else {
    EXPECT_FALSE(set_backend(Backend::avx2));
  }
  if (!neon_kernels()) {
    EXPECT_FALSE(set_backend(Backend::neon));
  }
  set_backend(Backend::scalar);
}

}  // namespace
}  // namespace fedstab::simd
