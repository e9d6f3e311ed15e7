#pragma once

#include <cmath>
#include <cstdint>

namespace nclt {

// Identifies one reproducible random stream. Identical (seed, stream)
// always reproduce identical draws, bit for bit, on any thread layout;
// parallel replications use stream = replication index and never share
// state.
struct RandomSource {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    // Derived stream for a sub-purpose (leave-one-out draws, probe points,
    // ...) so nested consumers never collide with the parent sequence.
    RandomSource child(std::uint64_t tag) const;
};

namespace detail {
// Stafford mix 13 finalizer, the same bijective mixer SplitMix64 uses.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;
}  // namespace detail

inline RandomSource RandomSource::child(std::uint64_t tag) const {
    return {seed, detail::mix64(stream + detail::kGolden * (tag + 1))};
}

// Counter-based generator: draw k of stream (seed, s) is
// mix64(key(seed, s) + k * golden), a pure function of its position.
class Rng {
public:
    explicit Rng(RandomSource src)
        : key_(detail::mix64(src.seed ^ detail::mix64(src.stream + detail::kGolden))),
          counter_(0) {}

    std::uint64_t next_u64() {
        return detail::mix64(key_ + (++counter_) * detail::kGolden);
    }

    // Uniform on (0, 1]: never 0, so logs in Box-Muller are safe.
    double uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1p-53;
    }

    // Uniform on (lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unit-rate exponential.
    double exponential() { return -std::log(uniform()); }

    double rademacher() { return (next_u64() & 1) ? 1.0 : -1.0; }

    // Uniform index in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo bias is < 2^-53 for the n used here; keep
        // exact anyway with a simple rejection loop.
        std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace nclt
