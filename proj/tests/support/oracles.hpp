// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations the test suite trusts.  Everything here is the
// slowest, most literal translation of the defining formulas, written without
// looking at the library code paths it checks.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hesplit/tensor.hpp"

namespace oracle {

using hesplit::Tensor;

/** Quadruple-loop 1D cross-correlation; x [n,Ci,T], w [Co,Ci,K], b [Co]. */
inline Tensor conv1d_naive(const Tensor& x, const Tensor& w, const Tensor& b,
                           size_t stride, size_t pad) {
    size_t n = x.dim(0), ci = x.dim(1), t = x.dim(2);
    size_t co = w.dim(0), k = w.dim(2);
    size_t to = (t + 2 * pad - k) / stride + 1;
    Tensor y({n, co, to});
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < co; ++o)
            for (size_t j = 0; j < to; ++j) {
                double acc = b[o];
                for (size_t i = 0; i < ci; ++i)
                    for (size_t q = 0; q < k; ++q) {
                        long src = long(j * stride + q) - long(pad);
                        if (src >= 0 && src < long(t))
                            acc += w(o, i, q) * x(s, i, size_t(src));
                    }
                y(s, o, j) = acc;
            }
    return y;
}

/**
 * Central-difference gradient of `f` with respect to `p`.
 * f must not hold references into p across calls.
 */
inline Tensor finite_diff(const std::function<double()>& f, Tensor& p,
                          double h = 1e-6) {
    Tensor g(p.shape());
    for (size_t i = 0; i < p.size(); ++i) {
        double keep = p[i];
        p[i] = keep + h;
        double up = f();
        p[i] = keep - h;
        double dn = f();
        p[i] = keep;
        g[i] = (up - dn) / (2 * h);
    }
    return g;
}

/** Largest |a-b| / max(1, |a|, |b|) over all elements. */
inline double max_rel_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

inline double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace oracle
