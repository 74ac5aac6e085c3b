#pragma once

#include <array>
#include <cstdint>

#include "shardex/bytes.hpp"

namespace shardex::crypto {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kPublicKeySize = 32;
inline constexpr std::size_t kSecretKeySize = 64;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kSeedSize = 32;

using Digest = std::array<std::uint8_t, kDigestSize>;

void init();

Digest sha256(BytesView data);

struct Keypair {
    Bytes public_key;  // kPublicKeySize
    Bytes secret_key;  // kSecretKeySize
};

// Deterministic Ed25519: same key and message always produce the same
// signature, which keeps ledger files byte-identical across runs.
Keypair keypair_from_seed(BytesView seed32);
Keypair keypair_from_string_seed(std::string_view tag);

Bytes sign(BytesView message, BytesView secret_key);
bool verify(BytesView message, BytesView signature, BytesView public_key);

inline Bytes digest_bytes(const Digest& d) {
    return Bytes(d.begin(), d.end());
}

} // namespace shardex::crypto
