// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "hesplit/ckks/linear.hpp"

using namespace hesplit;
using namespace hesplit::ckks;

namespace {

HeParams mid_set() { return {4096, {40, 20, 20}, std::ldexp(1.0, 21)}; }
HeParams big_set() { return {8192, {60, 40, 40, 60}, std::ldexp(1.0, 40)}; }
HeParams tiny_set() { return {2048, {18, 18, 18}, std::ldexp(1.0, 16)}; }

Tensor random_matrix(size_t rows, size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (auto& x : t.vec()) x = rng.uniform(-1.0, 1.0);
    return t;
}

Tensor random_bias(size_t out, Rng& rng) {
    Tensor t({out});
    for (auto& x : t.vec()) x = rng.uniform(-1.0, 1.0);
    return t;
}

// Independent reference: y[i,k] = sum_j x[i,j] w[j,k] + b[k].
Tensor plain_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y({x.dim(0), w.dim(1)});
    for (size_t i = 0; i < x.dim(0); ++i)
        for (size_t k = 0; k < w.dim(1); ++k) {
            double acc = b[k];
            for (size_t j = 0; j < x.dim(1); ++j) acc += x(i, j) * w(j, k);
            y(i, k) = acc;
        }
    return y;
}

PrivateContext keygen_for_linear(const HeParams& p, size_t in, size_t out, Rng& rng) {
    return keygen(p, he_linear_rotations(in, out, p.slot_count()), rng);
}

}  // namespace

TEST_CASE("rotation key helper covers baby and giant steps") {
    auto steps = he_linear_rotations(256, 5, 2048);
    REQUIRE(steps.size() == 31);
    for (size_t r = 1; r <= 15; ++r)
        CHECK(std::count(steps.begin(), steps.end(), r) == 1);
    for (size_t g = 16; g <= 240; g += 16)
        CHECK(std::count(steps.begin(), steps.end(), g) == 1);
    CHECK(std::count(steps.begin(), steps.end(), size_t(2048 - 16)) == 1);

    // in = 1 needs no babies; a single output needs no negative giants.
    CHECK(he_linear_rotations(1, 1, 16).empty());
}

TEST_CASE("per-row linear matches the plaintext product") {
    Rng rng(411);
    auto priv = keygen_for_linear(mid_set(), 8, 3, rng);
    Tensor x = random_matrix(2, 8, rng), w = random_matrix(8, 3, rng);
    Tensor b = random_bias(3, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
    auto y = he_linear_per_row(priv.pub, em, w, b);
    REQUIRE(y.mode == BatchMode::PerRow);
    REQUIRE(y.rows == 2);
    REQUIRE(y.cols == 3);
    REQUIRE(y.level() == em.level() + 1);
    CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
}

TEST_CASE("per-row linear holds at the contract shape") {
    Rng rng(412);
    auto priv = keygen_for_linear(mid_set(), 256, 5, rng);
    Tensor x = random_matrix(4, 256, rng), w = random_matrix(256, 5, rng);
    Tensor b = random_bias(5, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
    auto y = he_linear_per_row(priv.pub, em, w, b);
    CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
}

TEST_CASE("per-row linear accepts public-key input at the deep chain") {
    Rng rng(413);
    auto priv = keygen_for_linear(big_set(), 16, 4, rng);
    Tensor x = random_matrix(3, 16, rng), w = random_matrix(16, 4, rng);
    Tensor b = random_bias(4, rng);

    auto em = batch_encrypt_matrix(priv.pub, x, BatchMode::PerRow, rng);
    auto y = he_linear_per_row(priv.pub, em, w, b);
    CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
}

TEST_CASE("batched linear needs no rotation keys") {
    Rng rng(414);
    auto priv = keygen(mid_set(), {}, rng);
    Tensor x = random_matrix(2, 3, rng), w = random_matrix(3, 4, rng);
    Tensor b = random_bias(4, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::Batched, rng);
    REQUIRE(em.cts.size() == 3);
    auto y = he_linear_batched(priv.pub, em, w, b);
    REQUIRE(y.mode == BatchMode::Batched);
    REQUIRE(y.cts.size() == 4);
    REQUIRE(y.level() == em.level() + 1);
    CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
}

TEST_CASE("per-entry linear matches the plaintext product") {
    Rng rng(415);
    auto priv = keygen(mid_set(), {}, rng);
    Tensor x = random_matrix(2, 4, rng), w = random_matrix(4, 3, rng);
    Tensor b = random_bias(3, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::PerEntry, rng);
    REQUIRE(em.cts.size() == 8);
    auto y = he_linear_per_entry(priv.pub, em, w, b);
    REQUIRE(y.mode == BatchMode::PerEntry);
    REQUIRE(y.cts.size() == 6);
    CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
}

TEST_CASE("layouts agree with each other through the dispatcher") {
    Rng rng(416);
    auto priv = keygen_for_linear(big_set(), 16, 4, rng);
    Tensor x = random_matrix(3, 16, rng), w = random_matrix(16, 4, rng);
    Tensor b = random_bias(4, rng);
    Tensor want = plain_linear(x, w, b);

    Tensor got[3];
    size_t i = 0;
    for (auto mode : {BatchMode::PerRow, BatchMode::Batched, BatchMode::PerEntry}) {
        auto em = batch_encrypt_matrix(priv, x, mode, rng);
        got[i] = batch_decrypt_matrix(priv, he_linear(priv.pub, em, w, b));
        CHECK(got[i].max_abs_diff(want) < 1e-2);
        ++i;
    }
    CHECK(got[0].max_abs_diff(got[1]) < 1e-2);
    CHECK(got[1].max_abs_diff(got[2]) < 1e-2);
}

TEST_CASE("zero weight leaves only the broadcast bias") {
    Rng rng(417);
    auto priv = keygen_for_linear(mid_set(), 4, 3, rng);
    Tensor x = random_matrix(2, 4, rng);
    Tensor w = Tensor::zeros({4, 3});
    Tensor b = random_bias(3, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
    auto y = batch_decrypt_matrix(priv, he_linear_per_row(priv.pub, em, w, b));
    for (size_t i = 0; i < 2; ++i)
        for (size_t k = 0; k < 3; ++k) CHECK(std::abs(y(i, k) - b[k]) < 1e-2);
}

TEST_CASE("ciphertext counts and sizes order the layouts") {
    Rng rng(418);
    auto priv = keygen(tiny_set(), {}, rng);
    Tensor x = random_matrix(4, 8, rng);

    auto per_row = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
    auto batched = batch_encrypt_matrix(priv, x, BatchMode::Batched, rng);
    auto per_entry = batch_encrypt_matrix(priv, x, BatchMode::PerEntry, rng);
    REQUIRE(per_row.cts.size() == 4);
    REQUIRE(batched.cts.size() == 8);
    REQUIRE(per_entry.cts.size() == 32);

    size_t s_row = serialized_size(priv.pub, per_row);
    size_t s_col = serialized_size(priv.pub, batched);
    size_t s_ent = serialized_size(priv.pub, per_entry);
    CHECK(s_row < s_col);
    CHECK(s_col < s_ent);
    // Column batching beats the per-entry layout by the row count.
    CHECK(double(s_ent) / double(s_col) > 3.5);
}

TEST_CASE("capacity limits are enforced per layout") {
    Rng rng(419);
    auto priv = keygen(tiny_set(), {}, rng);

    Tensor wide = random_matrix(4, 2000, rng);
    REQUIRE_THROWS_AS(batch_encrypt_matrix(priv, wide, BatchMode::PerRow, rng),
                      CapacityError);
    Tensor tall = random_matrix(2000, 4, rng);
    REQUIRE_THROWS_AS(batch_encrypt_matrix(priv, tall, BatchMode::Batched, rng),
                      CapacityError);

    // A row that fits can still be too wide once the output span is added.
    Tensor x = random_matrix(1, 1000, rng);
    auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
    Tensor w = random_matrix(1000, 30, rng);
    Tensor b = random_bias(30, rng);
    REQUIRE_THROWS_AS(he_linear_per_row(priv.pub, em, w, b), CapacityError);
}

TEST_CASE("shape mismatches are rejected") {
    Rng rng(420);
    auto priv = keygen(tiny_set(), {}, rng);
    Tensor x = random_matrix(2, 4, rng);
    auto em = batch_encrypt_matrix(priv, x, BatchMode::Batched, rng);

    REQUIRE_THROWS_AS(he_linear_batched(priv.pub, em, random_matrix(5, 3, rng),
                                        random_bias(3, rng)),
                      DimensionError);
    REQUIRE_THROWS_AS(he_linear_batched(priv.pub, em, random_matrix(4, 3, rng),
                                        random_bias(2, rng)),
                      DimensionError);
    REQUIRE_THROWS_AS(he_linear_per_row(priv.pub, em, random_matrix(4, 3, rng),
                                        random_bias(3, rng)),
                      DimensionError);
}

TEST_CASE("the modulus chain bounds how many layers can run") {
    Rng rng(421);
    auto priv = keygen(tiny_set(), {}, rng);
    Tensor x = random_matrix(2, 3, rng), w = random_matrix(3, 3, rng);
    Tensor b = random_bias(3, rng);

    auto em = batch_encrypt_matrix(priv, x, BatchMode::Batched, rng);
    auto h1 = he_linear_batched(priv.pub, em, w, b);
    auto h2 = he_linear_batched(priv.pub, h1, w, b);
    REQUIRE(h2.level() == 2);
    REQUIRE_THROWS_AS(he_linear_batched(priv.pub, h2, w, b), DepthError);
}

TEST_CASE("missing rotations compose from power-of-two keys") {
    Rng rng(422);
    auto p = mid_set();

    SECTION("composition covers the binary expansion") {
        auto priv = keygen(p, {1, 4}, rng);
        std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
        auto ct = encrypt_symmetric(priv, encode(priv.pub, v), rng);
        auto out = decrypt_decode(priv, rotate(priv.pub, ct, 5), v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            double want = i + 5 < v.size() ? v[i + 5] : 0.0;
            CHECK(std::abs(out[i] - want) < 1e-2);
        }
        REQUIRE_THROWS_AS(rotate(priv.pub, ct, 3), CapabilityError);
    }

    SECTION("per-row linear runs on power-of-two keys alone") {
        std::vector<size_t> pow2;
        for (size_t bit = 1; bit < p.slot_count(); bit <<= 1) pow2.push_back(bit);
        auto priv = keygen(p, pow2, rng);
        Tensor x = random_matrix(2, 8, rng), w = random_matrix(8, 3, rng);
        Tensor b = random_bias(3, rng);
        auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
        auto y = he_linear_per_row(priv.pub, em, w, b);
        CHECK(batch_decrypt_matrix(priv, y).max_abs_diff(plain_linear(x, w, b)) < 1e-2);
    }

    SECTION("no keys at all is a capability failure") {
        auto priv = keygen(p, {}, rng);
        Tensor x = random_matrix(2, 8, rng), w = random_matrix(8, 3, rng);
        Tensor b = random_bias(3, rng);
        auto em = batch_encrypt_matrix(priv, x, BatchMode::PerRow, rng);
        REQUIRE_THROWS_AS(he_linear_per_row(priv.pub, em, w, b), CapabilityError);
    }
}

TEST_CASE("encrypted matrices round-trip through bytes") {
    Rng rng(423);
    auto priv = keygen(tiny_set(), {}, rng);
    Tensor x = random_matrix(3, 5, rng);
    auto em = batch_encrypt_matrix(priv, x, BatchMode::Batched, rng);

    Bytes blob = serialize(priv.pub, em);
    REQUIRE(blob.size() == serialized_size(priv.pub, em));
    auto back = deserialize_encrypted_matrix(priv.pub, blob);
    REQUIRE(back.mode == em.mode);
    REQUIRE(back.rows == em.rows);
    REQUIRE(back.cols == em.cols);
    REQUIRE(back.cts.size() == em.cts.size());
    for (size_t c = 0; c < em.cts.size(); ++c) {
        CHECK(back.cts[c].c0.res == em.cts[c].c0.res);
        CHECK(back.cts[c].c1.res == em.cts[c].c1.res);
    }

    SECTION("corrupted blobs are rejected") {
        Bytes bad = blob;
        bad[0] ^= 0xFF;
        REQUIRE_THROWS_AS(deserialize_encrypted_matrix(priv.pub, bad), SerializationError);

        Bytes cut(blob.begin(), blob.end() - 9);
        REQUIRE_THROWS_AS(deserialize_encrypted_matrix(priv.pub, cut), SerializationError);

        Bytes tag = blob;
        tag[5] = 7;  // layout byte
        REQUIRE_THROWS_AS(deserialize_encrypted_matrix(priv.pub, tag), SerializationError);

        Bytes shape = blob;
        shape[10] += 1;  // column count no longer matches the payload
        REQUIRE_THROWS_AS(deserialize_encrypted_matrix(priv.pub, shape),
                          SerializationError);
    }
}
