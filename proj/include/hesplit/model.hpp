// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/nn.hpp"
#include "hesplit/optim.hpp"

namespace hesplit {

/** Published network variants: single-lead (M1/M2) and 12-lead (M3). */
enum class Variant : uint8_t { M1 = 1, M2 = 2, M3 = 3 };

inline const char* variant_name(Variant v) {
    switch (v) {
    case Variant::M1: return "M1";
    case Variant::M2: return "M2";
    case Variant::M3: return "M3";
    }
    return "?";
}

inline Variant variant_from(const std::string& s) {
    if (s == "M1" || s == "m1") return Variant::M1;
    if (s == "M2" || s == "m2") return Variant::M2;
    if (s == "M3" || s == "m3") return Variant::M3;
    throw Error("unknown variant: " + s);
}

/**
 * Layer plan shared by all variants: conv(k=7,p=3) -> leaky relu -> pool(2,2)
 * -> conv(k=5,p=2) -> leaky relu -> pool(2,2) -> flatten -> linear -> softmax.
 * The client owns everything except the linear layer, which lives on the
 * server; the flattened second pool output is the activation map that crosses
 * the wire.
 */
struct ArchSpec {
    Variant variant;
    size_t in_ch, T, classes;
    size_t c1, k1, p1;
    size_t c2, k2, p2;
    size_t pool_k, pool_s;
    double relu_alpha;

    [[nodiscard]] size_t t_after_pool1() const { return T / pool_s; }
    [[nodiscard]] size_t t_after_pool2() const { return T / (pool_s * pool_s); }
    [[nodiscard]] size_t am_dim() const { return c2 * t_after_pool2(); }
};

inline ArchSpec arch_for(Variant v) {
    switch (v) {
    case Variant::M1: return {v, 1, 128, 5, 16, 7, 3, 8, 5, 2, 2, 2, 0.01};
    case Variant::M2: return {v, 1, 128, 5, 16, 7, 3, 16, 5, 2, 2, 2, 0.01};
    case Variant::M3: return {v, 12, 1000, 5, 16, 7, 3, 8, 5, 2, 2, 2, 0.01};
    }
    throw Error("unknown variant");
}

struct ClientParams {
    Tensor w1, b1, w2, b2;
};

struct ServerParams {
    Tensor w, b;  // [am_dim, classes], [classes]
};

struct ModelParams {
    ClientParams client;
    ServerParams server;
};

inline size_t param_count(const ArchSpec& a) {
    size_t conv1 = a.c1 * a.in_ch * a.k1 + a.c1;
    size_t conv2 = a.c2 * a.c1 * a.k2 + a.c2;
    size_t lin = a.am_dim() * a.classes + a.classes;
    return conv1 + conv2 + lin;
}

/** Uniform [-0.05, 0.05] init, fixed draw order so peers sharing a seed agree. */
inline ModelParams init_params(const ArchSpec& a, Rng& rng) {
    auto fill = [&](Tensor& t) {
        for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-0.05, 0.05);
    };
    ModelParams p;
    p.client.w1 = Tensor({a.c1, a.in_ch, a.k1});
    p.client.b1 = Tensor({a.c1});
    p.client.w2 = Tensor({a.c2, a.c1, a.k2});
    p.client.b2 = Tensor({a.c2});
    p.server.w = Tensor({a.am_dim(), a.classes});
    p.server.b = Tensor({a.classes});
    fill(p.client.w1);
    fill(p.client.b1);
    fill(p.client.w2);
    fill(p.client.b2);
    fill(p.server.w);
    fill(p.server.b);
    return p;
}

/** Intermediate values the client backward pass needs. */
struct ClientCache {
    Tensor x;
    Tensor z1, a1;
    PoolResult pool1;
    Tensor z2, a2;
    PoolResult pool2;
};

/** Runs the client stack; returns the activation map [n, am_dim]. */
inline Tensor client_forward(const ClientParams& p, const ArchSpec& a, const Tensor& x,
                             ClientCache* cache) {
    if (x.rank() != 3 || x.dim(1) != a.in_ch || x.dim(2) != a.T)
        throw DimensionError("client_forward input shape mismatch");
    size_t n = x.dim(0);
    Tensor z1 = conv1d(x, p.w1, p.b1, 1, a.p1);
    Tensor a1 = leaky_relu(z1, a.relu_alpha);
    PoolResult p1 = maxpool1d(a1, a.pool_k, a.pool_s);
    Tensor z2 = conv1d(p1.y, p.w2, p.b2, 1, a.p2);
    Tensor a2 = leaky_relu(z2, a.relu_alpha);
    PoolResult p2 = maxpool1d(a2, a.pool_k, a.pool_s);
    Tensor am = p2.y.reshaped({n, a.am_dim()});
    if (cache) {
        cache->x = x;
        cache->z1 = std::move(z1);
        cache->a1 = std::move(a1);
        cache->pool1 = std::move(p1);
        cache->z2 = std::move(z2);
        cache->a2 = std::move(a2);
        cache->pool2 = std::move(p2);
    }
    return am;
}

struct ClientGrads {
    Tensor dw1, db1, dw2, db2;
};

/** Backpropagates d(loss)/d(am) through the client stack. */
inline ClientGrads client_backward(const ClientParams& p, const ArchSpec& a,
                                   const ClientCache& c, const Tensor& d_am) {
    size_t n = d_am.dim(0);
    Tensor gpool2 = d_am.reshaped({n, a.c2, a.t_after_pool2()});
    Tensor ga2 = maxpool1d_backward(gpool2, c.pool2.argmax, c.a2.shape(), a.pool_k, a.pool_s);
    Tensor gz2 = leaky_relu_backward(ga2, c.z2, a.relu_alpha);
    Conv1dGrads g2 = conv1d_backward(gz2, c.pool1.y, p.w2, 1, a.p2);
    Tensor ga1 = maxpool1d_backward(g2.dx, c.pool1.argmax, c.a1.shape(), a.pool_k, a.pool_s);
    Tensor gz1 = leaky_relu_backward(ga1, c.z1, a.relu_alpha);
    Conv1dGrads g1 = conv1d_backward(gz1, c.x, p.w1, 1, a.p1);
    return {std::move(g1.dw), std::move(g1.db), std::move(g2.dw), std::move(g2.db)};
}

/** Adam accumulators for the four client tensors. */
struct ClientAdam {
    AdamState w1, b1, w2, b2;

    ClientAdam() = default;
    explicit ClientAdam(const ClientParams& p)
        : w1(p.w1.shape()), b1(p.b1.shape()), w2(p.w2.shape()), b2(p.b2.shape()) {}
};

inline void adam_update(ClientParams& p, ClientAdam& st, const ClientGrads& g, double eta) {
    adam_step(p.w1, st.w1, g.dw1, eta);
    adam_step(p.b1, st.b1, g.db1, eta);
    adam_step(p.w2, st.w2, g.dw2, eta);
    adam_step(p.b2, st.b2, g.db2, eta);
}

/** Full composed model: client stack plus the server linear layer. */
inline Tensor model_forward(const ModelParams& p, const ArchSpec& a, const Tensor& x) {
    Tensor am = client_forward(p.client, a, x, nullptr);
    return linear(am, p.server.w, p.server.b);
}

}  // namespace hesplit
