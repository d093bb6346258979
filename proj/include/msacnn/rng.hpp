#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace msacnn {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Combines a base seed with up to three tags into a sub-seed. Used to give
// folds, repetitions and RNG roles independent deterministic streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = base;
    std::uint64_t x = detail::splitmix64(s);
    s ^= a * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
    x ^= detail::splitmix64(s);
    s ^= b * 0xda942042e4dd58b5ULL + 0x9e3779b97f4a7c15ULL;
    x ^= detail::splitmix64(s);
    s ^= c * 0xca01f9dd57e91a1dULL + 0x5851f42d4c957f2dULL;
    x ^= detail::splitmix64(s);
    return x;
}

// Deterministic counter-based generator built on splitmix64. Unlike
// std::mt19937 combined with standard distributions, every draw is
// bit-reproducible across platforms and standard-library versions.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
        : state_(derive_seed(seed, stream, 0x7262676dULL)) {}

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

    // standard normal via Box-Muller, one cached value
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] so the log is finite
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace msacnn
