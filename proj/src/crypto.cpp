#include "shardex/crypto.hpp"

#include <sodium.h>

#include <mutex>
#include <stdexcept>

namespace shardex::crypto {

void init() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
    });
}

Digest sha256(BytesView data) {
    init();
    Digest d;
    crypto_hash_sha256(d.data(), data.data(), data.size());
    return d;
}

Keypair keypair_from_seed(BytesView seed32) {
    init();
    if (seed32.size() != kSeedSize) throw std::runtime_error("ed25519 seed must be 32 bytes");
    Keypair kp;
    kp.public_key.resize(kPublicKeySize);
    kp.secret_key.resize(kSecretKeySize);
    crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed32.data());
    return kp;
}

Keypair keypair_from_string_seed(std::string_view tag) {
    Digest seed = sha256(BytesView(reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()));
    return keypair_from_seed(BytesView(seed.data(), seed.size()));
}

Bytes sign(BytesView message, BytesView secret_key) {
    init();
    if (secret_key.size() != kSecretKeySize) throw std::runtime_error("bad ed25519 secret key size");
    Bytes sig(kSignatureSize);
    unsigned long long siglen = 0;
    crypto_sign_detached(sig.data(), &siglen, message.data(), message.size(), secret_key.data());
    sig.resize(siglen);
    return sig;
}

bool verify(BytesView message, BytesView signature, BytesView public_key) {
    init();
    if (signature.size() != kSignatureSize || public_key.size() != kPublicKeySize) return false;
    return crypto_sign_verify_detached(signature.data(), message.data(), message.size(), public_key.data()) == 0;
}

} // namespace shardex::crypto
