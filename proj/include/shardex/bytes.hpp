#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shardex {

using Bytes = std::vector<std::uint8_t>;
using BytesView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(BytesView b) {
    return std::string(b.begin(), b.end());
}

inline BytesView view_of(const Bytes& b) {
    return BytesView(b.data(), b.size());
}

std::string to_hex(BytesView b);
Bytes from_hex(std::string_view hex);

} // namespace shardex
