// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>

#include "hesplit/ckks/modring.hpp"

namespace hesplit::ckks {

/**
 * Canonical embedding between real slot vectors and ring coefficients.
 * Slot j corresponds to evaluation at zeta^{5^j}, zeta the primitive (2n)-th
 * complex root; the other half of the evaluations is fixed by conjugate
 * symmetry, giving n/2 usable slots.  Both directions run as a twisted
 * Cooley-Tukey pass over the 5^j index group in O(n log n).
 */
class Embedding {
public:
    Embedding() = default;

    explicit Embedding(size_t n) : n_(n), slots_(n / 2), m_(2 * n) {
        rot_group_.resize(slots_);
        uint64_t g = 1;
        for (size_t j = 0; j < slots_; ++j) {
            rot_group_[j] = size_t(g);
            g = (g * 5) % m_;
        }
        ksi_.resize(m_ + 1);
        for (size_t k = 0; k <= m_; ++k) {
            double a = 2.0 * 3.14159265358979323846 * double(k) / double(m_);
            ksi_[k] = {std::cos(a), std::sin(a)};
        }
    }

    [[nodiscard]] size_t slots() const { return slots_; }

    /**
     * Slot values -> coefficient view: returns u with
     * coeff[k] = Re(u[k]), coeff[k + n/2] = Im(u[k]) (before scaling).
     */
    [[nodiscard]] std::vector<std::complex<double>> to_coeff(
        std::vector<std::complex<double>> vals) const {
        pad(vals);
        for (size_t len = slots_; len >= 2; len >>= 1) {
            size_t lenh = len >> 1;
            size_t lenq = len << 2;
            for (size_t i = 0; i < slots_; i += len) {
                for (size_t j = 0; j < lenh; ++j) {
                    size_t idx = (lenq - (rot_group_[j] % lenq)) * (m_ / lenq);
                    auto u = vals[i + j] + vals[i + j + lenh];
                    auto v = (vals[i + j] - vals[i + j + lenh]) * ksi_[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
        }
        bit_reverse(vals);
        for (auto& v : vals) v /= double(slots_);
        return vals;
    }

    /** Coefficient view -> slot values; exact inverse of to_coeff. */
    [[nodiscard]] std::vector<std::complex<double>> to_slots(
        std::vector<std::complex<double>> u) const {
        pad(u);
        bit_reverse(u);
        for (size_t len = 2; len <= slots_; len <<= 1) {
            size_t lenh = len >> 1;
            size_t lenq = len << 2;
            for (size_t i = 0; i < slots_; i += len) {
                for (size_t j = 0; j < lenh; ++j) {
                    size_t idx = (rot_group_[j] % lenq) * (m_ / lenq);
                    auto u0 = u[i + j];
                    auto v0 = u[i + j + lenh] * ksi_[idx];
                    u[i + j] = u0 + v0;
                    u[i + j + lenh] = u0 - v0;
                }
            }
        }
        return u;
    }

private:
    void pad(std::vector<std::complex<double>>& v) const {
        if (v.size() > slots_) throw CapacityError("value does not fit the slot count");
        v.resize(slots_, {0.0, 0.0});
    }

    void bit_reverse(std::vector<std::complex<double>>& v) const {
        size_t n = v.size();
        for (size_t i = 1, j = 0; i < n; ++i) {
            size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(v[i], v[j]);
        }
    }

    size_t n_ = 0, slots_ = 0, m_ = 0;
    std::vector<size_t> rot_group_;
    std::vector<std::complex<double>> ksi_;
};

}  // namespace hesplit::ckks
