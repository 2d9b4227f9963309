#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace metaweight {

/// Counter-based splittable random generator built on the splitmix64 mix
/// function. The stream is a pure function of (key, counter), so identical
/// seeds give identical streams regardless of platform, and labeled child
/// streams are independent of how much the parent has been consumed.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : key_(mix(seed ^ kKeyTweak)) {}

    /// Derive an independent child stream from a label. Uses only the key,
    /// never the counter, so split order and parent draws don't interact.
    RngState split(std::string_view label) const {
        return RngState(mix(key_ ^ fnv1a(label)), 0);
    }

    /// Numbered variant for per-run / per-seed fan-out.
    RngState split(std::uint64_t index) const {
        return RngState(mix(key_ ^ mix(index + 0x51ed270bULL)), 0);
    }

    std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        // Rejection sampling keeps the draw exactly uniform.
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// One standard normal draw (Box-Muller, cosine branch). Two uniforms
    /// per draw; no hidden pair cache, so the state stays (key, counter).
    double next_normal() {
        const double u1 =
            (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> normal_vector(std::size_t dim) {
        std::vector<double> v(dim);
        for (auto& x : v) x = next_normal();
        return v;
    }

    /// Fisher-Yates shuffle driven by this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    RngState(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    static constexpr std::uint64_t kKeyTweak = 0x6a09e667f3bcc909ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    static constexpr std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace metaweight
