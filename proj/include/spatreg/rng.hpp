#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace spatreg {

// Counter-based generator (splitmix64 over a mixed state). Every random draw in the
// library flows from one master seed through named sub-streams, so results are
// reproducible bit-for-bit across platforms and independent of thread count.
class rng {
public:
    explicit rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
    std::uint64_t next_index(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    /// Standard normal via Box-Muller; one value per call, no cached spare.
    double next_normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Seed for a named sub-stream, e.g. substream(master, "forest", tree_index).
inline std::uint64_t substream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = detail::mix64(master ^ detail::hash_str(name));
    return detail::mix64(h ^ (index + 0x9e3779b97f4a7c15ULL));
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, rng& gen) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(gen.next_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// First m entries of a random permutation of 0..n-1 (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, rng& gen) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m && i + 1 < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(gen.next_index(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
}

} // namespace spatreg
