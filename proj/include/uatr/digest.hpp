#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace uatr {

/// 64-bit FNV-1a, used for config digests and cache validation.
class Fnv1a {
public:
    void update(std::span<const std::uint8_t> bytes) {
        for (auto b : bytes) {
            state_ ^= b;
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view text) {
        update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    std::uint64_t value() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view text) {
    Fnv1a h;
    h.update(text);
    return h.value();
}

std::string hex_digest(std::uint64_t value);

}  // namespace uatr
