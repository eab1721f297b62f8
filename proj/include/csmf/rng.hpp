#pragma once

#include <cstdint>

namespace csmf {

/// Counter-based pseudo-random stream. The full generator state is exactly
/// (seed, position): any draw sequence can be replayed on any platform by
/// reconstructing the stream at a stored position, which is what makes
/// checkpoint/resume and regeneration byte-stable. Every call that returns a
/// value advances the position by exactly one, regardless of how many raw
/// words the value consumed.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t position = 0)
        : seed_(seed), position_(position) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t position() const { return position_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double next_double();
    /// Standard normal (Box-Muller, no cached spare).
    double next_gaussian();
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n);

    /// Independent child stream addressed by integer tags. Deterministic in
    /// (seed, tags) and unaffected by this stream's position.
    RngStream derive(std::uint64_t tag_a, std::uint64_t tag_b = 0) const;

private:
    std::uint64_t word(std::uint64_t lane) const;

    std::uint64_t seed_;
    std::uint64_t position_;
};

} // namespace csmf
