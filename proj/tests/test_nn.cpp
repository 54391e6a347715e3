// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "hesplit/model.hpp"
#include "hesplit/nn.hpp"
#include "hesplit/optim.hpp"
#include "support/oracles.hpp"

using namespace hesplit;

TEST_CASE("conv1d matches the hand-computed example") {
    // Single channel, w = [1,-1], b = 0.5, x = [1,2,3,4]: y_t = x_t - x_{t+1} + 0.5.
    Tensor x({1, 1, 4}, {1, 2, 3, 4});
    Tensor w({1, 1, 2}, {1, -1});
    Tensor b({1}, {0.5});
    Tensor y = conv1d(x, w, b, 1, 0);
    REQUIRE(y.shape() == std::vector<size_t>{1, 1, 3});
    CHECK(y[0] == Catch::Approx(-0.5).margin(1e-15));
    CHECK(y[1] == Catch::Approx(-0.5).margin(1e-15));
    CHECK(y[2] == Catch::Approx(-0.5).margin(1e-15));
}

TEST_CASE("conv1d agrees with the quadruple-loop oracle") {
    Rng rng(7);
    for (int inst = 0; inst < 8; ++inst) {
        size_t n = 1 + size_t(rng.uniform_int(0, 2));
        size_t ci = 1 + size_t(rng.uniform_int(0, 2));
        size_t co = 1 + size_t(rng.uniform_int(0, 3));
        size_t k = 1 + size_t(rng.uniform_int(0, 4));
        size_t pad = size_t(rng.uniform_int(0, long(k) - 1));
        size_t stride = 1 + size_t(rng.uniform_int(0, 1));
        size_t t = k + size_t(rng.uniform_int(0, 9));
        Tensor x({n, ci, t}), w({co, ci, k}), b({co});
        for (size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
        for (size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-1, 1);
        Tensor got = conv1d(x, w, b, stride, pad);
        Tensor want = oracle::conv1d_naive(x, w, b, stride, pad);
        REQUIRE(got.shape() == want.shape());
        CHECK(got.max_abs_diff(want) < 1e-12);
    }
}

TEST_CASE("leaky relu forward values") {
    Tensor z({1, 3}, {-2.0, 0.0, 3.0});
    Tensor a = leaky_relu(z, 0.01);
    CHECK(a[0] == Catch::Approx(-0.02).margin(1e-15));
    CHECK(a[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(a[2] == Catch::Approx(3.0).margin(1e-15));
}

TEST_CASE("max pool picks window maxima, first index on ties") {
    Tensor x({1, 1, 4}, {3, 1, 4, 2});
    auto r = maxpool1d(x, 2, 2);
    REQUIRE(r.y.shape() == std::vector<size_t>{1, 1, 2});
    CHECK(r.y[0] == 3.0);
    CHECK(r.y[1] == 4.0);
    CHECK(r.argmax[0] == 0);
    CHECK(r.argmax[1] == 2);

    Tensor tie({1, 1, 4}, {5, 5, 2, 2});
    auto rt = maxpool1d(tie, 2, 2);
    CHECK(rt.argmax[0] == 0);
    CHECK(rt.argmax[1] == 2);
}

TEST_CASE("softmax is stable and matches closed forms") {
    Tensor z({1, 2}, {std::log(2.0), 0.0});
    Tensor p = softmax(z);
    CHECK(p[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

    // Large offsets must not overflow.
    Tensor big({1, 3}, {1000.0, 1000.0, 1000.0});
    Tensor pb = softmax(big);
    for (size_t i = 0; i < 3; ++i) CHECK(pb[i] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of the uniform prediction is ln(classes)") {
    size_t m = 5;
    Tensor p = Tensor::full({1, m}, 1.0 / double(m));
    Tensor y({1, m});
    y(0, 2) = 1.0;
    CHECK(ce_loss(p, y) == Catch::Approx(std::log(double(m))).epsilon(1e-12));
}

TEST_CASE("cross entropy clamps vanishing probabilities") {
    Tensor p({1, 2}, {0.0, 1.0});
    Tensor y({1, 2}, {1.0, 0.0});
    double j = ce_loss(p, y);
    CHECK(j == Catch::Approx(-std::log(1e-12)).epsilon(1e-9));
    CHECK(std::isfinite(j));
}

TEST_CASE("fused softmax cross-entropy gradient is (p - y)/n") {
    Rng rng(11);
    size_t n = 4, m = 5;
    Tensor z({n, m}), y({n, m});
    for (size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-2, 2);
    for (size_t i = 0; i < n; ++i) y(i, size_t(rng.uniform_int(0, long(m) - 1))) = 1.0;
    Tensor p = softmax(z);
    Tensor g = ce_softmax_grad(p, y);
    // Check against finite differences through the full loss.
    Tensor zc = z;
    auto loss = [&] { return ce_loss(softmax(zc), y); };
    Tensor fd = oracle::finite_diff(loss, zc);
    CHECK(oracle::max_rel_diff(g, fd) < 1e-7);
}

TEST_CASE("layer backward passes agree with finite differences") {
    Rng rng(23);
    // Composite: conv -> leaky relu -> pool -> flatten -> linear -> softmax CE.
    size_t n = 2, ci = 2, t = 12, co = 3, k = 3, pad = 1, m = 4;
    size_t tp = t / 2;
    Tensor x({n, ci, t}), w({co, ci, k}), b({co});
    Tensor lw({co * tp, m}), lb({m}), y({n, m});
    for (size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.5, 0.5);
    for (size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.5, 0.5);
    for (size_t i = 0; i < lw.size(); ++i) lw[i] = rng.uniform(-0.5, 0.5);
    for (size_t i = 0; i < lb.size(); ++i) lb[i] = rng.uniform(-0.5, 0.5);
    for (size_t i = 0; i < n; ++i) y(i, size_t(rng.uniform_int(0, long(m) - 1))) = 1.0;

    auto forward = [&](const Tensor& xv, const Tensor& wv, const Tensor& bv,
                       const Tensor& lwv, const Tensor& lbv) {
        Tensor z = conv1d(xv, wv, bv, 1, pad);
        Tensor a = leaky_relu(z, 0.01);
        auto pr = maxpool1d(a, 2, 2);
        Tensor flat = pr.y.reshaped({n, co * tp});
        Tensor out = linear(flat, lwv, lbv);
        return ce_loss(softmax(out), y);
    };

    // Analytic gradients through the same chain.
    Tensor z = conv1d(x, w, b, 1, pad);
    Tensor a = leaky_relu(z, 0.01);
    auto pr = maxpool1d(a, 2, 2);
    Tensor flat = pr.y.reshaped({n, co * tp});
    Tensor out = linear(flat, lw, lb);
    Tensor p = softmax(out);
    Tensor gout = ce_softmax_grad(p, y);
    auto lg = linear_backward(gout, flat, lw);
    Tensor gpool = lg.dx.reshaped({n, co, tp});
    Tensor ga = maxpool1d_backward(gpool, pr.argmax, a.shape(), 2, 2);
    Tensor gz = leaky_relu_backward(ga, z, 0.01);
    auto cg = conv1d_backward(gz, x, w, 1, pad);

    auto fd_of = [&](Tensor& param) {
        auto f = [&] { return forward(x, w, b, lw, lb); };
        return oracle::finite_diff(f, param);
    };
    CHECK(oracle::max_rel_diff(cg.dw, fd_of(w)) < 1e-6);
    CHECK(oracle::max_rel_diff(cg.db, fd_of(b)) < 1e-6);
    CHECK(oracle::max_rel_diff(lg.dw, fd_of(lw)) < 1e-6);
    CHECK(oracle::max_rel_diff(lg.db, fd_of(lb)) < 1e-6);
    CHECK(oracle::max_rel_diff(cg.dx, fd_of(x)) < 1e-6);
}

TEST_CASE("adam single step on a scalar matches the closed form") {
    Tensor th({1}, {0.0});
    Tensor g({1}, {0.5});
    AdamState st(th.shape());
    adam_step(th, st, g, 0.001);
    // m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25, step=0.001*0.5/(0.5+1e-8).
    CHECK(th[0] == Catch::Approx(-0.00099999998).margin(1e-12));
}

TEST_CASE("sgd step is plain descent") {
    Tensor th({2}, {1.0, -1.0});
    Tensor g({2}, {0.5, 0.25});
    sgd_step(th, g, 0.1);
    CHECK(th[0] == Catch::Approx(0.95).margin(1e-15));
    CHECK(th[1] == Catch::Approx(-1.025).margin(1e-15));
}

TEST_CASE("published architectures expose the exact parameter counts") {
    CHECK(param_count(arch_for(Variant::M1)) == 2061);
    CHECK(param_count(arch_for(Variant::M2)) == 3989);
    CHECK(param_count(arch_for(Variant::M3)) == 12013);
    CHECK(arch_for(Variant::M1).am_dim() == 256);
    CHECK(arch_for(Variant::M2).am_dim() == 512);
    CHECK(arch_for(Variant::M3).am_dim() == 2000);
}

TEST_CASE("model init is deterministic and bounded") {
    auto a = arch_for(Variant::M1);
    Rng r1(42), r2(42), r3(43);
    ModelParams p1 = init_params(a, r1), p2 = init_params(a, r2), p3 = init_params(a, r3);
    CHECK(p1.client.w1.vec() == p2.client.w1.vec());
    CHECK(p1.server.w.vec() == p2.server.w.vec());
    CHECK(p1.client.w1.vec() != p3.client.w1.vec());
    double lo = 0, hi = 0;
    for (double v : p1.server.w.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= -0.05);
    CHECK(hi <= 0.05);
}

TEST_CASE("client forward then server layer reproduces the composed model bitwise") {
    auto a = arch_for(Variant::M1);
    Rng rng(5);
    ModelParams mp = init_params(a, rng);
    Tensor x({3, size_t(a.in_ch), size_t(a.T)});
    for (size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);

    ClientCache cache;
    Tensor am = client_forward(mp.client, a, x, &cache);
    REQUIRE(am.shape() == std::vector<size_t>{3, size_t(a.am_dim())});
    Tensor split_logits = linear(am, mp.server.w, mp.server.b);
    Tensor local_logits = model_forward(mp, a, x);
    REQUIRE(split_logits.size() == local_logits.size());
    for (size_t i = 0; i < split_logits.size(); ++i)
        CHECK(split_logits[i] == local_logits[i]);
}
