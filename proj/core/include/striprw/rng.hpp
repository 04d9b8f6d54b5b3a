#pragma once

/// @file rng.hpp
/// @brief Counter-based splittable pseudo-random streams.
///
/// The generator is the splitmix64 finalizer applied to an affine counter:
///     out(k) = mix64(seed + k * GOLDEN_GAMMA)
/// which makes every draw a pure function of (seed, k). Streams are split by
/// deriving child seeds with the same finalizer, so layer generation, each
/// trajectory, and each oracle run own independent, reproducible streams
/// keyed by (master seed, purpose tag, index). No global state anywhere.

#include <cstdint>

namespace striprw {

namespace detail {
constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// Finalizer from splitmix64 (Steele, Lea & Flood; Vigna's constants).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

/// Derive a child seed from a parent seed and an index. Used to split one
/// master seed into per-layer / per-trajectory streams.
constexpr std::uint64_t split_seed(std::uint64_t parent, std::uint64_t index) {
    // Two finalizer rounds with distinct offsets decorrelate (parent, index)
    // pairs that differ in only a few bits.
    std::uint64_t h = detail::mix64(parent + 0x632BE59BD9B4E019ULL);
    h = detail::mix64(h ^ (index * detail::kGoldenGamma + 0x9E6C63D0876A9ADDULL));
    return h;
}

/// Signed index overload (layer indices are signed).
constexpr std::uint64_t split_seed(std::uint64_t parent, std::int64_t index) {
    return split_seed(parent, static_cast<std::uint64_t>(index));
}

/// A counter-based stream: draw k is mix64(seed + (k+1) * gamma).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += detail::kGoldenGamma;
        return detail::mix64(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double next_range(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

private:
    std::uint64_t state_;
};

}  // namespace striprw
