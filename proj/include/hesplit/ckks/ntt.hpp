// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/ckks/modring.hpp"

namespace hesplit::ckks {

/**
 * Negacyclic number-theoretic transform over Z_q[X]/(X^n + 1), n a power of
 * two, q = 1 (mod 2n).  Powers of the 2n-th root are cached in bit-reversed
 * order with Shoup companions; forward output is bit-reversed, which the
 * inverse undoes, so callers only ever see natural order.
 */
class NttTables {
public:
    NttTables() = default;

    NttTables(size_t n, uint64_t q, Rng& rng) : n_(n), q_(q) {
        if (n == 0 || (n & (n - 1)) != 0) throw ParameterError("ring degree must be a power of two");
        log_n_ = 0;
        while ((size_t(1) << log_n_) < n) ++log_n_;
        uint64_t psi = primitive_root_2n(q, n, rng);
        uint64_t ipsi = inv_mod(psi, q);
        roots_.resize(n);
        iroots_.resize(n);
        roots_shoup_.resize(n);
        iroots_shoup_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            size_t r = reverse_bits(i);
            roots_[i] = pow_mod(psi, r, q);
            iroots_[i] = pow_mod(ipsi, r, q);
            roots_shoup_[i] = shoup(roots_[i], q);
            iroots_shoup_[i] = shoup(iroots_[i], q);
        }
        inv_n_ = inv_mod(uint64_t(n), q);
        inv_n_shoup_ = shoup(inv_n_, q);
    }

    [[nodiscard]] size_t n() const { return n_; }
    [[nodiscard]] uint64_t q() const { return q_; }

    /** In-place forward transform; input natural order, output bit-reversed. */
    void forward(uint64_t* a) const {
        size_t t = n_ >> 1;
        for (size_t m = 1; m < n_; m <<= 1, t >>= 1) {
            for (size_t i = 0; i < m; ++i) {
                uint64_t w = roots_[m + i];
                uint64_t ws = roots_shoup_[m + i];
                uint64_t* x = a + 2 * i * t;
                uint64_t* y = x + t;
                for (size_t j = 0; j < t; ++j) {
                    uint64_t u = x[j];
                    uint64_t v = mul_mod_shoup(y[j], w, ws, q_);
                    x[j] = add_mod(u, v, q_);
                    y[j] = sub_mod(u, v, q_);
                }
            }
        }
    }

    /** In-place inverse transform; undoes forward() including the ordering. */
    void inverse(uint64_t* a) const {
        size_t t = 1;
        for (size_t m = n_ >> 1; m >= 1; m >>= 1, t <<= 1) {
            for (size_t i = 0; i < m; ++i) {
                uint64_t w = iroots_[m + i];
                uint64_t ws = iroots_shoup_[m + i];
                uint64_t* x = a + 2 * i * t;
                uint64_t* y = x + t;
                for (size_t j = 0; j < t; ++j) {
                    uint64_t u = x[j];
                    uint64_t v = y[j];
                    x[j] = add_mod(u, v, q_);
                    y[j] = mul_mod_shoup(sub_mod(u, v, q_), w, ws, q_);
                }
            }
        }
        for (size_t j = 0; j < n_; ++j) a[j] = mul_mod_shoup(a[j], inv_n_, inv_n_shoup_, q_);
    }

private:
    [[nodiscard]] size_t reverse_bits(size_t v) const {
        size_t r = 0;
        for (int b = 0; b < log_n_; ++b) {
            r = (r << 1) | (v & 1);
            v >>= 1;
        }
        return r;
    }

    size_t n_ = 0;
    int log_n_ = 0;
    uint64_t q_ = 0;
    std::vector<uint64_t> roots_, iroots_, roots_shoup_, iroots_shoup_;
    uint64_t inv_n_ = 0, inv_n_shoup_ = 0;
};

}  // namespace hesplit::ckks
