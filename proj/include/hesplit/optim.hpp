// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/tensor.hpp"

namespace hesplit {

/** First/second moment accumulators for one parameter tensor. */
struct AdamState {
    Tensor m, v;
    long t = 0;

    AdamState() = default;
    explicit AdamState(const std::vector<size_t>& shape) : m(shape), v(shape) {}
};

/** One Adam update with bias correction. */
inline void adam_step(Tensor& w, AdamState& st, const Tensor& g, double eta,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (!w.same_shape(g) || !w.same_shape(st.m))
        throw DimensionError("adam_step shape mismatch");
    st.t += 1;
    double c1 = 1.0 - std::pow(beta1, double(st.t));
    double c2 = 1.0 - std::pow(beta2, double(st.t));
    for (size_t i = 0; i < w.size(); ++i) {
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
        double mhat = st.m[i] / c1;
        double vhat = st.v[i] / c2;
        w[i] -= eta * mhat / (std::sqrt(vhat) + eps);
    }
}

/** Plain mini-batch gradient descent update. */
inline void sgd_step(Tensor& w, const Tensor& g, double eta) {
    if (!w.same_shape(g)) throw DimensionError("sgd_step shape mismatch");
    for (size_t i = 0; i < w.size(); ++i) w[i] -= eta * g[i];
}

}  // namespace hesplit
