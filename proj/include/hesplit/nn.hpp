// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

#include "hesplit/tensor.hpp"

namespace hesplit {

// ==== Convolution ====

/**
 * 1D cross-correlation with zero padding.
 * x [n,Ci,T], w [Co,Ci,K], b [Co] -> y [n,Co,To], To = (T+2p-K)/stride + 1.
 */
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                     size_t stride, size_t pad) {
    if (x.rank() != 3 || w.rank() != 3 || b.rank() != 1)
        throw DimensionError("conv1d expects x[n,Ci,T], w[Co,Ci,K], b[Co]");
    size_t n = x.dim(0), ci = x.dim(1), t = x.dim(2);
    size_t co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != ci) throw DimensionError("conv1d channel mismatch");
    if (b.dim(0) != co) throw DimensionError("conv1d bias mismatch");
    if (t + 2 * pad < k) throw DimensionError("conv1d kernel exceeds padded input");
    size_t to = (t + 2 * pad - k) / stride + 1;

    Tensor y({n, co, to});
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < co; ++o) {
            double bo = b[o];
            for (size_t j = 0; j < to; ++j) {
                double acc = bo;
                long base = long(j * stride) - long(pad);
                for (size_t i = 0; i < ci; ++i) {
                    size_t q0 = base < 0 ? size_t(-base) : 0;
                    size_t q1 = std::min(k, size_t(std::max<long>(0, long(t) - base)));
                    const double* xs = &x(s, i, 0);
                    const double* ws = &w(o, i, 0);
                    for (size_t q = q0; q < q1; ++q) acc += ws[q] * xs[size_t(base + long(q))];
                }
                y(s, o, j) = acc;
            }
        }
    return y;
}

struct Conv1dGrads {
    Tensor dx, dw, db;
};

/** Gradients of conv1d given upstream g [n,Co,To]. */
inline Conv1dGrads conv1d_backward(const Tensor& g, const Tensor& x, const Tensor& w,
                                   size_t stride, size_t pad) {
    size_t n = x.dim(0), ci = x.dim(1), t = x.dim(2);
    size_t co = w.dim(0), k = w.dim(2);
    size_t to = g.dim(2);
    if (g.dim(0) != n || g.dim(1) != co)
        throw DimensionError("conv1d_backward upstream shape mismatch");

    Conv1dGrads r{Tensor(x.shape()), Tensor(w.shape()), Tensor({co})};
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < co; ++o)
            for (size_t j = 0; j < to; ++j) {
                double gv = g(s, o, j);
                r.db[o] += gv;
                long base = long(j * stride) - long(pad);
                for (size_t i = 0; i < ci; ++i)
                    for (size_t q = 0; q < k; ++q) {
                        long src = base + long(q);
                        if (src < 0 || src >= long(t)) continue;
                        r.dw(o, i, q) += gv * x(s, i, size_t(src));
                        r.dx(s, i, size_t(src)) += gv * w(o, i, q);
                    }
            }
    return r;
}

// ==== Activations and pooling ====

inline Tensor leaky_relu(const Tensor& z, double alpha) {
    Tensor a(z.shape());
    for (size_t i = 0; i < z.size(); ++i) a[i] = z[i] >= 0 ? z[i] : alpha * z[i];
    return a;
}

inline Tensor leaky_relu_backward(const Tensor& g, const Tensor& z, double alpha) {
    if (!g.same_shape(z)) throw DimensionError("leaky_relu_backward shape mismatch");
    Tensor d(z.shape());
    for (size_t i = 0; i < z.size(); ++i) d[i] = g[i] * (z[i] >= 0 ? 1.0 : alpha);
    return d;
}

struct PoolResult {
    Tensor y;
    std::vector<size_t> argmax;  // flat source index per output element
};

/** Max pooling over time; ties resolve to the first index. */
inline PoolResult maxpool1d(const Tensor& x, size_t k, size_t stride) {
    size_t n = x.dim(0), c = x.dim(1), t = x.dim(2);
    if (k == 0 || k > t) throw DimensionError("maxpool1d window invalid");
    size_t to = (t - k) / stride + 1;
    PoolResult r{Tensor({n, c, to}), std::vector<size_t>(n * c * to)};
    size_t out = 0;
    for (size_t s = 0; s < n; ++s)
        for (size_t i = 0; i < c; ++i)
            for (size_t j = 0; j < to; ++j, ++out) {
                size_t best = j * stride;
                double bv = x(s, i, best);
                for (size_t q = 1; q < k; ++q) {
                    double v = x(s, i, j * stride + q);
                    if (v > bv) {
                        bv = v;
                        best = j * stride + q;
                    }
                }
                r.y[out] = bv;
                r.argmax[out] = (s * c + i) * t + best;
            }
    return r;
}

inline Tensor maxpool1d_backward(const Tensor& g, const std::vector<size_t>& argmax,
                                 const std::vector<size_t>& in_shape, size_t k,
                                 size_t stride) {
    (void)k;
    (void)stride;
    if (g.size() != argmax.size()) throw DimensionError("maxpool1d_backward index mismatch");
    Tensor dx(in_shape);
    for (size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
    return dx;
}

// ==== Dense layer ====

/** x [n,d] * w [d,m] + b [m]. */
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw DimensionError("linear expects x[n,d], w[d,m], b[m]");
    size_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
    if (w.dim(0) != d || b.dim(0) != m) throw DimensionError("linear shape mismatch");
    Tensor y({n, m});
    for (size_t s = 0; s < n; ++s)
        for (size_t j = 0; j < d; ++j) {
            double xv = x(s, j);
            if (xv == 0.0) continue;
            const double* wr = &w(j, 0);
            double* yr = &y(s, 0);
            for (size_t o = 0; o < m; ++o) yr[o] += xv * wr[o];
        }
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < m; ++o) y(s, o) += b[o];
    return y;
}

struct LinearGrads {
    Tensor dx, dw, db;
};

/**
 * Gradients of linear given upstream g [n,m].  db is the plain batch sum;
 * the 1/n of a mean loss arrives already folded into g.
 */
inline LinearGrads linear_backward(const Tensor& g, const Tensor& x, const Tensor& w) {
    size_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
    if (g.dim(0) != n || g.dim(1) != m)
        throw DimensionError("linear_backward upstream shape mismatch");
    LinearGrads r{Tensor({n, d}), Tensor({d, m}), Tensor({m})};
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < m; ++o) {
            double gv = g(s, o);
            r.db[o] += gv;
            if (gv == 0.0) continue;
            for (size_t j = 0; j < d; ++j) {
                r.dw(j, o) += x(s, j) * gv;
                r.dx(s, j) += w(j, o) * gv;
            }
        }
    return r;
}

// ==== Classification head ====

/** Row-wise softmax with max subtraction. */
inline Tensor softmax(const Tensor& z) {
    if (z.rank() != 2) throw DimensionError("softmax expects [n,m]");
    size_t n = z.dim(0), m = z.dim(1);
    Tensor p(z.shape());
    for (size_t s = 0; s < n; ++s) {
        double mx = z(s, 0);
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, z(s, j));
        double sum = 0;
        for (size_t j = 0; j < m; ++j) {
            double e = std::exp(z(s, j) - mx);
            p(s, j) = e;
            sum += e;
        }
        for (size_t j = 0; j < m; ++j) p(s, j) /= sum;
    }
    return p;
}

inline constexpr double kCeClamp = 1e-12;

/** Mean cross entropy over the batch; probabilities clamped at 1e-12. */
inline double ce_loss(const Tensor& probs, const Tensor& y_onehot) {
    if (!probs.same_shape(y_onehot)) throw DimensionError("ce_loss shape mismatch");
    size_t n = probs.dim(0), m = probs.dim(1);
    double j = 0;
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < m; ++o)
            if (y_onehot(s, o) != 0.0)
                j -= y_onehot(s, o) * std::log(std::max(probs(s, o), kCeClamp));
    return j / double(n);
}

/** Gradient of mean CE through softmax: (p - y)/n. */
inline Tensor ce_softmax_grad(const Tensor& probs, const Tensor& y_onehot) {
    if (!probs.same_shape(y_onehot)) throw DimensionError("ce_softmax_grad shape mismatch");
    size_t n = probs.dim(0);
    Tensor g(probs.shape());
    for (size_t i = 0; i < g.size(); ++i) g[i] = (probs[i] - y_onehot[i]) / double(n);
    return g;
}

/** Fraction of rows whose argmax matches the label, in percent. */
inline double accuracy_pct(const Tensor& logits, const std::vector<int>& labels) {
    size_t n = logits.dim(0), m = logits.dim(1);
    if (labels.size() != n) throw DimensionError("accuracy label count mismatch");
    size_t hit = 0;
    for (size_t s = 0; s < n; ++s) {
        size_t best = 0;
        for (size_t j = 1; j < m; ++j)
            if (logits(s, j) > logits(s, best)) best = j;
        if (int(best) == labels[s]) ++hit;
    }
    return 100.0 * double(hit) / double(n);
}

}  // namespace hesplit
