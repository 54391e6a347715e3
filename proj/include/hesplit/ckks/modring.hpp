// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/common.hpp"

namespace hesplit::ckks {

// ==== 64-bit modular arithmetic (moduli < 2^62) ====

inline uint64_t add_mod(uint64_t a, uint64_t b, uint64_t q) {
    uint64_t s = a + b;
    return s >= q ? s - q : s;
}

inline uint64_t sub_mod(uint64_t a, uint64_t b, uint64_t q) {
    return a >= b ? a - b : a + q - b;
}

inline uint64_t mul_mod(uint64_t a, uint64_t b, uint64_t q) {
    return uint64_t((unsigned __int128)(a) * b % q);
}

inline uint64_t pow_mod(uint64_t base, uint64_t exp, uint64_t q) {
    uint64_t r = 1 % q;
    base %= q;
    while (exp) {
        if (exp & 1) r = mul_mod(r, base, q);
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    return r;
}

inline uint64_t inv_mod(uint64_t a, uint64_t q) {
    // q prime throughout this library.
    return pow_mod(a, q - 2, q);
}

/** Precomputed Shoup factor for repeated multiplication by `w` mod q. */
inline uint64_t shoup(uint64_t w, uint64_t q) {
    return uint64_t(((unsigned __int128)(w) << 64) / q);
}

/** x*w mod q using a precomputed Shoup factor; requires q < 2^63. */
inline uint64_t mul_mod_shoup(uint64_t x, uint64_t w, uint64_t w_shoup, uint64_t q) {
    uint64_t hi = uint64_t(((unsigned __int128)(x) * w_shoup) >> 64);
    uint64_t r = x * w - hi * q;
    return r >= q ? r - q : r;
}

/** Precomputed Barrett factor floor(2^64 / q) for reducing full u64 values. */
inline uint64_t barrett_factor(uint64_t q) {
    return uint64_t((unsigned __int128)(0) - 1) / q;
}

/** x mod q via a precomputed Barrett factor; any x < 2^64, q < 2^63. */
inline uint64_t barrett_reduce(uint64_t x, uint64_t q, uint64_t factor) {
    uint64_t hi = uint64_t(((unsigned __int128)(x) * factor) >> 64);
    uint64_t r = x - hi * q;
    while (r >= q) r -= q;
    return r;
}

/** Signed value reduced into [0, q). */
inline uint64_t mod_signed(int64_t v, uint64_t q) {
    int64_t r = v % int64_t(q);
    return r < 0 ? uint64_t(r + int64_t(q)) : uint64_t(r);
}

/** Residue of x mod q centered into (-q/2, q/2]. */
inline int64_t center(uint64_t x, uint64_t q) {
    return x > q / 2 ? int64_t(x) - int64_t(q) : int64_t(x);
}

// ==== Primality and NTT-friendly prime search ====

/** Deterministic Miller-Rabin for 64-bit integers. */
inline bool is_prime(uint64_t n) {
    if (n < 2) return false;
    for (uint64_t p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        if (n % p == 0) return n == p;
    }
    uint64_t d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    for (uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        uint64_t x = pow_mod(a, d, n);
        if (x == 1 || x == n - 1) continue;
        bool witness = true;
        for (int i = 1; i < s; ++i) {
            x = mul_mod(x, x, n);
            if (x == n - 1) {
                witness = false;
                break;
            }
        }
        if (witness) return false;
    }
    return true;
}

/**
 * Largest primes of exactly `bits` bits with p = 1 (mod modulus_step),
 * descending from 2^bits, skipping values in `avoid`.  Top-of-range primes
 * keep the rescaled scale within a tiny factor of 2^bits, which is what the
 * chain's middle primes are sized for.  Throws when the class is exhausted.
 */
inline std::vector<uint64_t> find_ntt_primes(int bits, size_t count, uint64_t modulus_step,
                                             const std::vector<uint64_t>& avoid = {}) {
    if (bits < 2 || bits > 62) throw ParameterError("prime bit size out of range");
    uint64_t lo = 1ULL << (bits - 1);
    uint64_t hi = (1ULL << bits) - 1;
    std::vector<uint64_t> out;
    for (uint64_t p = (hi / modulus_step) * modulus_step + 1; p > lo && out.size() < count;
         p -= modulus_step) {
        if (p > hi || !is_prime(p)) continue;
        bool skip = false;
        for (uint64_t a : avoid)
            if (a == p) skip = true;
        if (!skip) out.push_back(p);
    }
    if (out.size() < count)
        throw ParameterError("not enough " + std::to_string(bits) +
                             "-bit NTT-friendly primes for this ring degree");
    return out;
}

/** Primitive (2n)-th root of unity mod q; requires q = 1 (mod 2n). */
inline uint64_t primitive_root_2n(uint64_t q, size_t n, Rng& rng) {
    if ((q - 1) % (2 * n) != 0) throw ParameterError("modulus not NTT friendly");
    uint64_t exp = (q - 1) / (2 * n);
    for (int tries = 0; tries < 256; ++tries) {
        uint64_t h = 2 + rng.next_u64() % (q - 3);
        uint64_t psi = pow_mod(h, exp, q);
        if (pow_mod(psi, n, q) == q - 1) return psi;
    }
    throw ParameterError("no primitive root found");
}

}  // namespace hesplit::ckks
