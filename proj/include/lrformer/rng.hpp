#pragma once

#include <cstdint>
#include <string_view>

namespace lrf {

// Counter-based generator: value i of a stream is a pure function of
// (key, i), so results are identical across platforms and call orders.
class RandomStream {
  public:
    RandomStream(std::uint64_t seed, std::string_view name);
    explicit RandomStream(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal (Box-Muller, consumes two counters).
    double normal();
    // Normal(0, std) resampled until |x| <= bound.
    double truncated_normal(double std, double bound);
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t stream_key(std::uint64_t seed, std::string_view name);

}  // namespace lrf
