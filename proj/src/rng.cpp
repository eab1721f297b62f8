#include "csmf/rng.hpp"

#include <cmath>
#include <numbers>

#include "csmf/errors.hpp"

namespace csmf {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t RngStream::word(std::uint64_t lane) const {
    return mix64(seed_ ^ mix64(position_ * 2 + lane));
}

std::uint64_t RngStream::next_u64() {
    std::uint64_t w = word(0);
    ++position_;
    return w;
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
    // (0,1] x [0,1) so the log argument is never zero.
    double u1 = (static_cast<double>(word(0) >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(word(1) >> 11) * 0x1.0p-53;
    ++position_;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw ConfigError("RngStream::next_below: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

RngStream RngStream::derive(std::uint64_t tag_a, std::uint64_t tag_b) const {
    std::uint64_t child = mix64(mix64(seed_ + kGolden * tag_a) + 0xC2B2AE3D27D4EB4Full * tag_b);
    return RngStream(child, 0);
}

} // namespace csmf
