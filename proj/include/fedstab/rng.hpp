#pragma once

// Counter-based random streams.
//
// Every random decision in the simulator is drawn from a stream addressed by
// (master seed, purpose, a, b), e.g. (seed, minibatch, round, client). Two
// runs that address the same stream see the same numbers no matter which
// thread, arm of a coupled run, or algorithm asks for them. The generator is
// Philox4x32-10; the distributions below are implemented here rather than
// taken from <random> because the standard leaves their algorithms
// unspecified, and outputs must match across standard libraries.

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace fedstab {

enum class Purpose : std::uint32_t {
  init = 1,
  client_selection = 2,
  minibatch = 3,
  data_pool = 4,
  partition_proportions = 5,
  partition_shuffle = 6,
  neighbor = 7,
  probes = 8,
  positions = 9,
  bootstrap = 10,
  constants = 11,
  data_means = 12,
};

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

class CounterStream {
 public:
  using result_type = std::uint64_t;

  CounterStream(std::uint64_t seed, Purpose purpose, std::uint32_t a = 0,
                std::uint32_t b = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return next_u64(); }

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1].
  double uniform_open_zero();
  // Uniform integer in [0, bound); bound > 0. Exact (rejection sampling).
  std::uint64_t uniform_index(std::uint64_t bound);
  double normal();
  // Gamma(shape, 1) for shape > 0.
  double gamma(double shape);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  unsigned used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// Dirichlet(concentration * 1_k) sample of length k.
std::vector<double> dirichlet(CounterStream& stream, std::size_t k,
                              double concentration);

// Fisher-Yates shuffle driven by the stream.
template <typename T>
void shuffle(std::span<T> items, CounterStream& stream) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = stream.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

// `count` distinct indices from [0, population), in ascending order.
std::vector<std::size_t> sample_without_replacement(CounterStream& stream,
                                                    std::size_t population,
                                                    std::size_t count);

}  // namespace fedstab
