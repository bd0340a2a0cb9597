#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mrbm/types.hpp"

namespace mrbm {

/// All randomness in the library flows from one root seed through named
/// sub-streams.  A sub-stream is identified by (root_seed, label, index):
///   state0 = splitmix64(root_seed ^ fnv1a64(label)) + index * 0x9e3779b97f4a7c15
/// and the mt19937_64 engine is seeded with splitmix64 iterates of state0.
/// The same (seed, label, index) triple always yields the same stream, on any
/// platform, which is what makes chain batches reproducible regardless of
/// thread count: chain i always draws from ("chain", i).
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::string_view label, std::uint64_t index = 0)
      : engine_(derive(root_seed, label, index)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return unit_(engine_); }  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }

  /// Uniform integer in {0, ..., n-1}.
  std::uint64_t uniform_index(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(engine_);
  }

  /// +1 or -1 with equal probability.
  double rademacher() { return engine_() & 1u ? 1.0 : -1.0; }

  Vector normal_vector(Index n) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  void fill_normal(Eigen::Ref<Matrix> out) {
    double* p = out.data();
    const Index n = out.size();
    for (Index i = 0; i < n; ++i) p[i] = normal_(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static std::mt19937_64 derive(std::uint64_t root, std::string_view label, std::uint64_t index) {
    std::uint64_t s = root ^ fnv1a64(label);
    std::uint64_t state = splitmix64(s) + index * 0x9e3779b97f4a7c15ull;
    // mt19937_64 wants a well-spread state; feed it several splitmix iterates.
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state) >> 32),
                      static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state) >> 32)};
    return std::mt19937_64(seq);
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace mrbm
