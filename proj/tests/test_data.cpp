// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cstdio>

#include "hesplit/data.hpp"
#include "hesplit/nn.hpp"
#include "hesplit/optim.hpp"

using namespace hesplit;

namespace {
std::string tmp_path(const char* base) {
    return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") + "/" + base;
}
}  // namespace

TEST_CASE("binary dataset roundtrip preserves payload and labels") {
    Dataset ds = synth_dataset(20, 2, 16, 99);
    auto path = tmp_path("hesplit_ds.t64");
    save_dataset(path, ds);
    Dataset back = load_dataset(path);
    REQUIRE(back.x.shape() == ds.x.shape());
    CHECK(back.x.vec() == ds.x.vec());
    CHECK(back.y == ds.y);
    CHECK(back.classes == 5);
    std::remove(path.c_str());
}

TEST_CASE("truncated and corrupted records are rejected") {
    Dataset ds = synth_dataset(5, 1, 8, 1);
    ByteWriter w;
    write_tensor_record(w, ds.x);
    Bytes whole = w.take();

    ByteReader trunc(whole.data(), whole.size() - 9);
    CHECK_THROWS_AS(read_tensor_record(trunc), SerializationError);

    Bytes bad = whole;
    bad[0] ^= 0xFF;
    ByteReader br(bad);
    CHECK_THROWS_AS(read_tensor_record(br), SerializationError);
}

TEST_CASE("csv roundtrip") {
    Dataset ds = synth_dataset(10, 1, 12, 7);
    auto path = tmp_path("hesplit_ds.csv");
    save_csv(path, ds);
    Dataset back = load_csv(path, 1, 12);
    REQUIRE(back.size() == ds.size());
    CHECK(back.y == ds.y);
    CHECK(back.x.max_abs_diff(ds.x) < 1e-5);
    Dataset wide = synth_dataset(4, 3, 5, 8);
    save_csv(path, wide);
    CHECK_THROWS_AS(load_csv(path, 2, 5), SerializationError);
    std::remove(path.c_str());
}

TEST_CASE("synthetic corpus is deterministic, balanced, and batch prefixes stay balanced") {
    Dataset a = synth_dataset(60, 1, 32, 5);
    Dataset b = synth_dataset(60, 1, 32, 5);
    Dataset c = synth_dataset(60, 1, 32, 6);
    CHECK(a.x.vec() == b.x.vec());
    CHECK(a.x.vec() != c.x.vec());
    std::vector<int> counts(5, 0);
    for (int y : a.y) counts[size_t(y)]++;
    for (int n : counts) CHECK(n == 12);
    // Any prefix of whole class-cycles is balanced.
    std::vector<int> pre(5, 0);
    for (size_t i = 0; i < 20; ++i) pre[size_t(a.y[i])]++;
    for (int n : pre) CHECK(n == 4);
}

TEST_CASE("a linear probe on raw timesteps beats chance on the synthetic corpus") {
    Dataset ds = synth_dataset(300, 1, 64, 31);
    size_t d = 64, m = 5, n = ds.size();
    Tensor x = ds.x.reshaped({n, d});
    Tensor yh = one_hot(ds.y, m);
    Rng rng(3);
    Tensor w({d, m}), b({m});
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.05, 0.05);
    for (int step = 0; step < 60; ++step) {
        Tensor p = softmax(linear(x, w, b));
        Tensor g = ce_softmax_grad(p, yh);
        auto lg = linear_backward(g, x, w);
        sgd_step(w, lg.dw, 0.5);
        sgd_step(b, lg.db, 0.5);
    }
    double acc = accuracy_pct(linear(x, w, b), ds.y);
    INFO("linear probe accuracy " << acc);
    CHECK(acc > 40.0);  // chance is 20 on five balanced classes
}

TEST_CASE("seeded split is deterministic with the right sizes and disjoint content") {
    Dataset ds = synth_dataset(120, 1, 16, 11);
    auto [tr1, te1] = train_test_split(ds, 1.0 / 6.0, 77);
    auto [tr2, te2] = train_test_split(ds, 1.0 / 6.0, 77);
    CHECK(tr1.size() == 100);
    CHECK(te1.size() == 20);
    CHECK(tr1.x.vec() == tr2.x.vec());
    CHECK(te1.y == te2.y);
    auto [tr3, te3] = train_test_split(ds, 1.0 / 6.0, 78);
    CHECK(te1.x.vec() != te3.x.vec());
}

TEST_CASE("one hot encodes and rejects bad labels") {
    Tensor t = one_hot({3}, 5);
    for (size_t i = 0; i < 5; ++i) CHECK(t[i] == (i == 3 ? 1.0 : 0.0));
    CHECK_THROWS_AS(one_hot({5}, 5), DimensionError);
}
