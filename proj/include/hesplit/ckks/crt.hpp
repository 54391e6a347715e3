// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/ckks/modring.hpp"

namespace hesplit::ckks {

/** Minimal little-endian multi-limb unsigned integer for CRT composition. */
struct BigU {
    std::vector<uint64_t> limb;

    static BigU from(uint64_t v) { return BigU{{v}}; }

    void trim() {
        while (limb.size() > 1 && limb.back() == 0) limb.pop_back();
    }

    [[nodiscard]] int cmp(const BigU& o) const {
        size_t a = limb.size(), b = o.limb.size();
        size_t m = std::max(a, b);
        for (size_t i = m; i-- > 0;) {
            uint64_t x = i < a ? limb[i] : 0;
            uint64_t y = i < b ? o.limb[i] : 0;
            if (x != y) return x < y ? -1 : 1;
        }
        return 0;
    }

    void add(const BigU& o) {
        size_t m = std::max(limb.size(), o.limb.size());
        limb.resize(m + 1, 0);
        unsigned __int128 carry = 0;
        for (size_t i = 0; i < m + 1; ++i) {
            unsigned __int128 s = carry + limb[i] + (i < o.limb.size() ? o.limb[i] : 0);
            limb[i] = uint64_t(s);
            carry = s >> 64;
        }
        trim();
    }

    /** this -= o; requires this >= o. */
    void sub(const BigU& o) {
        uint64_t borrow = 0;
        for (size_t i = 0; i < limb.size(); ++i) {
            unsigned __int128 x = limb[i];
            unsigned __int128 y = (i < o.limb.size() ? o.limb[i] : 0) + (unsigned __int128)borrow;
            if (x >= y) {
                limb[i] = uint64_t(x - y);
                borrow = 0;
            } else {
                limb[i] = uint64_t(((unsigned __int128)1 << 64) + x - y);
                borrow = 1;
            }
        }
        trim();
    }

    [[nodiscard]] BigU mul_word(uint64_t w) const {
        BigU r;
        r.limb.assign(limb.size() + 1, 0);
        unsigned __int128 carry = 0;
        for (size_t i = 0; i < limb.size(); ++i) {
            unsigned __int128 p = (unsigned __int128)(limb[i]) * w + carry;
            r.limb[i] = uint64_t(p);
            carry = p >> 64;
        }
        r.limb[limb.size()] = uint64_t(carry);
        r.trim();
        return r;
    }

    [[nodiscard]] uint64_t mod_word(uint64_t q) const {
        unsigned __int128 r = 0;
        for (size_t i = limb.size(); i-- > 0;) r = ((r << 64) | limb[i]) % q;
        return uint64_t(r);
    }

    [[nodiscard]] double to_double() const {
        double v = 0;
        for (size_t i = limb.size(); i-- > 0;) v = v * 18446744073709551616.0 + double(limb[i]);
        return v;
    }
};

/**
 * CRT composition tables for one active prime set: reconstructs the centered
 * coefficient value exactly, then converts to double, so the conversion error
 * is relative to the (small) plaintext value rather than to the big modulus.
 */
class CrtDecoder {
public:
    CrtDecoder() = default;

    explicit CrtDecoder(const std::vector<uint64_t>& primes) : primes_(primes) {
        q_ = BigU::from(1);
        for (uint64_t p : primes) q_ = q_.mul_word(p);
        half_ = q_;
        shr1(half_);
        punc_.resize(primes.size());
        inv_.resize(primes.size());
        for (size_t j = 0; j < primes.size(); ++j) {
            BigU m = BigU::from(1);
            for (size_t i = 0; i < primes.size(); ++i)
                if (i != j) m = m.mul_word(primes[i]);
            punc_[j] = m;
            inv_[j] = inv_mod(m.mod_word(primes[j]), primes[j]);
        }
    }

    /** residues[j] = coefficient mod primes[j]; returns the centered value. */
    [[nodiscard]] double compose_centered(const std::vector<uint64_t>& residues) const {
        BigU acc = BigU::from(0);
        for (size_t j = 0; j < primes_.size(); ++j) {
            uint64_t t = mul_mod(residues[j], inv_[j], primes_[j]);
            acc.add(punc_[j].mul_word(t));
        }
        while (acc.cmp(q_) >= 0) acc.sub(q_);
        if (acc.cmp(half_) > 0) {
            BigU neg = q_;
            neg.sub(acc);
            return -neg.to_double();
        }
        return acc.to_double();
    }

    [[nodiscard]] double modulus_log2() const {
        double s = 0;
        for (uint64_t p : primes_) s += std::log2(double(p));
        return s;
    }

private:
    static void shr1(BigU& v) {
        uint64_t carry = 0;
        for (size_t i = v.limb.size(); i-- > 0;) {
            uint64_t next = v.limb[i] & 1;
            v.limb[i] = (v.limb[i] >> 1) | (carry << 63);
            carry = next;
        }
        v.trim();
    }

    std::vector<uint64_t> primes_;
    BigU q_, half_;
    std::vector<BigU> punc_;
    std::vector<uint64_t> inv_;
};

}  // namespace hesplit::ckks
