#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>

namespace csmf {

/// FNV-1a content digest, used to assert that parameter sets do not move.
class Digest {
public:
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001B3ull;
        }
    }
    void update_u64(std::uint64_t v) { update(&v, sizeof(v)); }
    void update_double(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }
    void update_doubles(std::span<const double> vs) {
        for (double v : vs) update_double(v);
    }

    std::uint64_t value() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xCBF29CE484222325ull;
};

} // namespace csmf
