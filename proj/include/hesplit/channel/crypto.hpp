// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <mutex>

#include <sodium.h>

#include "hesplit/common.hpp"

namespace hesplit::channel {

inline void ensure_sodium() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw Error("crypto library failed to initialize");
    });
}

inline constexpr size_t kBoxPkBytes = crypto_box_PUBLICKEYBYTES;
inline constexpr size_t kBoxSkBytes = crypto_box_SECRETKEYBYTES;
inline constexpr size_t kSealOverhead = crypto_box_SEALBYTES;
inline constexpr size_t kVerBytes = crypto_sign_PUBLICKEYBYTES;
inline constexpr size_t kSigSkBytes = crypto_sign_SECRETKEYBYTES;
inline constexpr size_t kSigBytes = crypto_sign_BYTES;
inline constexpr size_t kHashBytes = crypto_hash_sha256_BYTES;

/**
 * One party's key material: a key-encapsulation pair for sealing payloads to
 * this party and a signature pair for authenticating what it sends.  Secret
 * halves stay in this struct; only public_identity() ever leaves it.
 */
struct KeyRing {
    std::array<uint8_t, kBoxPkBytes> box_pk{};
    std::array<uint8_t, kBoxSkBytes> box_sk{};
    std::array<uint8_t, kVerBytes> ver{};
    std::array<uint8_t, kSigSkBytes> sig_sk{};
    // Peer half, installed from the out-of-band identity exchange.
    std::array<uint8_t, kBoxPkBytes> peer_box_pk{};
    std::array<uint8_t, kVerBytes> peer_ver{};
};

/** The shareable half: box pk followed by the signature verify key. */
inline Bytes public_identity(const KeyRing& ring) {
    Bytes out(ring.box_pk.begin(), ring.box_pk.end());
    out.insert(out.end(), ring.ver.begin(), ring.ver.end());
    return out;
}

inline void install_peer(KeyRing& ring, const Bytes& identity) {
    if (identity.size() != kBoxPkBytes + kVerBytes)
        throw SerializationError("peer identity has the wrong length");
    std::copy_n(identity.data(), kBoxPkBytes, ring.peer_box_pk.begin());
    std::copy_n(identity.data() + kBoxPkBytes, kVerBytes, ring.peer_ver.begin());
}

/** Fresh sealed-box and signature pairs from a seeded stream. */
inline KeyRing setup_keys(Rng& rng) {
    ensure_sodium();
    KeyRing ring;
    std::array<uint8_t, 32> seed;
    auto fill = [&] {
        for (size_t i = 0; i < seed.size(); i += 8) {
            uint64_t v = rng.next_u64();
            std::memcpy(seed.data() + i, &v, 8);
        }
    };
    fill();
    crypto_box_seed_keypair(ring.box_pk.data(), ring.box_sk.data(), seed.data());
    fill();
    crypto_sign_seed_keypair(ring.ver.data(), ring.sig_sk.data(), seed.data());
    sodium_memzero(seed.data(), seed.size());
    return ring;
}

inline std::array<uint8_t, kHashBytes> sha256(const uint8_t* data, size_t n) {
    ensure_sodium();
    std::array<uint8_t, kHashBytes> out;
    crypto_hash_sha256(out.data(), data, n);
    return out;
}

inline Bytes sign_detached(const KeyRing& ring, const uint8_t* msg, size_t n) {
    ensure_sodium();
    Bytes sig(kSigBytes);
    crypto_sign_detached(sig.data(), nullptr, msg, n, ring.sig_sk.data());
    return sig;
}

inline bool verify_detached(const std::array<uint8_t, kVerBytes>& ver, const uint8_t* msg,
                            size_t n, const uint8_t* sig, size_t sig_len) {
    ensure_sodium();
    if (sig_len != kSigBytes) return false;
    return crypto_sign_verify_detached(sig, msg, n, ver.data()) == 0;
}

/** Seals bytes so only the holder of `pk`'s secret half can read them. */
inline Bytes seal_to(const std::array<uint8_t, kBoxPkBytes>& pk, const Bytes& payload) {
    ensure_sodium();
    Bytes out(payload.size() + kSealOverhead);
    crypto_box_seal(out.data(), payload.data(), payload.size(), pk.data());
    return out;
}

inline Bytes open_sealed(const KeyRing& ring, const Bytes& sealed) {
    ensure_sodium();
    if (sealed.size() < kSealOverhead)
        throw ProtocolError(Fault::MalformedFrame, "sealed payload too short");
    Bytes out(sealed.size() - kSealOverhead);
    if (crypto_box_seal_open(out.data(), sealed.data(), sealed.size(), ring.box_pk.data(),
                             ring.box_sk.data()) != 0)
        throw ProtocolError(Fault::MalformedFrame, "sealed payload would not open");
    return out;
}

}  // namespace hesplit::channel
