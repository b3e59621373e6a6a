#include "lrformer/rng.hpp"

#include <cmath>
#include <numbers>

namespace lrf {

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(h ^ mix64(seed));
}

RandomStream::RandomStream(std::uint64_t seed, std::string_view name) : key_(stream_key(seed, name)) {}

std::uint64_t RandomStream::next_u64() {
    return mix64(key_ ^ mix64(counter_++));
}

double RandomStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) {
        u1 = 1e-300;
    }
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::truncated_normal(double std, double bound) {
    for (;;) {
        const double x = std * normal();
        if (std::abs(x) <= bound) {
            return x;
        }
    }
}

std::uint64_t RandomStream::below(std::uint64_t n) {
    // Reject the tail so the modulo is unbiased.
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit) {
            return x % n;
        }
    }
}

}  // namespace lrf
