// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>

#include "hesplit/ckks/ckks.hpp"
#include "hesplit/tensor.hpp"

namespace hesplit::ckks {

// ==== Encrypted matrices ====

/**
 * Packing layouts for an encrypted [rows, cols] matrix.
 *   PerRow   : one ciphertext per sample row, the row in slots [0, cols).
 *   Batched  : one ciphertext per feature column, the column in slots
 *              [0, rows).  Linear layers then need no rotations at all.
 *   PerEntry : one ciphertext per scalar, the value in every slot.  This is
 *              the naive tensor layout batching is measured against.
 */
enum class BatchMode : uint8_t { PerRow = 1, Batched = 2, PerEntry = 3 };

inline const char* batch_mode_name(BatchMode m) {
    switch (m) {
        case BatchMode::PerRow: return "per-row";
        case BatchMode::Batched: return "batched";
        case BatchMode::PerEntry: return "per-entry";
    }
    return "?";
}

struct EncryptedMatrix {
    BatchMode mode = BatchMode::PerRow;
    size_t rows = 0, cols = 0;
    std::vector<Ciphertext> cts;

    [[nodiscard]] size_t level() const { return cts.empty() ? 0 : cts.front().level; }
    [[nodiscard]] double scale() const { return cts.empty() ? 0.0 : cts.front().scale; }
};

namespace detail {

inline size_t expected_ct_count(BatchMode mode, size_t rows, size_t cols) {
    switch (mode) {
        case BatchMode::PerRow: return rows;
        case BatchMode::Batched: return cols;
        case BatchMode::PerEntry: return rows * cols;
    }
    return 0;
}

inline void require_packable(const ContextCore& core, BatchMode mode, size_t rows,
                             size_t cols) {
    if (rows == 0 || cols == 0) throw DimensionError("matrix must be non-empty");
    if (mode == BatchMode::PerRow && cols > core.slots)
        throw CapacityError("matrix row exceeds slot capacity");
    if (mode == BatchMode::Batched && rows > core.slots)
        throw CapacityError("matrix column exceeds slot capacity");
}

inline void require_matrix(const ContextCore& core, const EncryptedMatrix& em) {
    require_packable(core, em.mode, em.rows, em.cols);
    if (em.cts.size() != expected_ct_count(em.mode, em.rows, em.cols))
        throw DimensionError("ciphertext count does not match the packing layout");
    for (const auto& ct : em.cts) {
        if (ct.level != em.cts.front().level || ct.scale != em.cts.front().scale)
            throw AlignmentError("matrix ciphertexts sit at mixed levels or scales");
    }
}

/** Plaintext slot vectors of the matrix in layout order. */
inline std::vector<std::vector<double>> pack_matrix(const Tensor& m, BatchMode mode) {
    size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<std::vector<double>> packs;
    switch (mode) {
        case BatchMode::PerRow:
            for (size_t i = 0; i < rows; ++i)
                packs.emplace_back(m.data() + i * cols, m.data() + (i + 1) * cols);
            break;
        case BatchMode::Batched:
            for (size_t j = 0; j < cols; ++j) {
                std::vector<double> col(rows);
                for (size_t i = 0; i < rows; ++i) col[i] = m(i, j);
                packs.push_back(std::move(col));
            }
            break;
        case BatchMode::PerEntry:
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < cols; ++j) packs.push_back({m(i, j)});
            break;
    }
    return packs;
}

template <class EncryptFn>
EncryptedMatrix encrypt_matrix_with(const PublicContext& ctx, const Tensor& m,
                                    BatchMode mode, EncryptFn&& enc) {
    if (m.rank() != 2) throw DimensionError("matrix encryption expects a rank-2 tensor");
    require_packable(*ctx.core, mode, m.dim(0), m.dim(1));
    EncryptedMatrix em;
    em.mode = mode;
    em.rows = m.dim(0);
    em.cols = m.dim(1);
    for (auto& pack : pack_matrix(m, mode)) em.cts.push_back(enc(encode(ctx, pack)));
    return em;
}

}  // namespace detail

inline EncryptedMatrix batch_encrypt_matrix(const PublicContext& ctx, const Tensor& m,
                                            BatchMode mode, Rng& rng) {
    return detail::encrypt_matrix_with(
        ctx, m, mode, [&](const Plaintext& pt) { return encrypt(ctx, pt, rng); });
}

/** Secret-key variant; lower fresh noise, same wire format. */
inline EncryptedMatrix batch_encrypt_matrix(const PrivateContext& priv, const Tensor& m,
                                            BatchMode mode, Rng& rng) {
    return detail::encrypt_matrix_with(priv.pub, m, mode, [&](const Plaintext& pt) {
        return encrypt_symmetric(priv, pt, rng);
    });
}

inline Tensor batch_decrypt_matrix(const PrivateContext& priv, const EncryptedMatrix& em) {
    detail::require_matrix(*priv.pub.core, em);
    Tensor out({em.rows, em.cols});
    switch (em.mode) {
        case BatchMode::PerRow:
            for (size_t i = 0; i < em.rows; ++i) {
                auto row = decrypt_decode(priv, em.cts[i], em.cols);
                for (size_t j = 0; j < em.cols; ++j) out(i, j) = row[j];
            }
            break;
        case BatchMode::Batched:
            for (size_t j = 0; j < em.cols; ++j) {
                auto col = decrypt_decode(priv, em.cts[j], em.rows);
                for (size_t i = 0; i < em.rows; ++i) out(i, j) = col[i];
            }
            break;
        case BatchMode::PerEntry:
            for (size_t i = 0; i < em.rows; ++i)
                for (size_t j = 0; j < em.cols; ++j)
                    out(i, j) = decrypt_decode(priv, em.cts[i * em.cols + j], 1)[0];
            break;
    }
    return out;
}

// ==== Homomorphic linear layer ====

namespace detail {

inline void require_linear_operands(const ContextCore& core, const EncryptedMatrix& em,
                                    const Tensor& w, const Tensor& b) {
    require_matrix(core, em);
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(1))
        throw DimensionError("weight must be [in, out] with a matching bias");
    if (w.dim(0) != em.cols) throw DimensionError("input width does not match the weight");
    if (em.cts.front().active() < 2)
        throw DepthError("modulus chain exhausted: no level left to multiply");
}

/** Per-prime residue of round(c * scale), with its Shoup companion. */
struct ScaledScalar {
    std::vector<std::array<uint64_t, 2>> res;  // {value, shoup} per active prime
    bool zero = true;
};

inline ScaledScalar scaled_scalar(const ContextCore& core, double c, double scale,
                                  size_t active) {
    double r = c * scale;
    if (std::abs(r) > 9e18) throw CapacityError("constant too large for this scale");
    int64_t x = std::llround(r);
    ScaledScalar s;
    s.zero = (x == 0);
    s.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        uint64_t v = mod_signed(x, q);
        s.res[i] = {v, shoup(v, q)};
    }
    return s;
}

/** dst += ct * scalar over every active prime, in place. */
inline void axpy_scalar(const ContextCore& core, const Ciphertext& ct,
                        const ScaledScalar& s, RnsPoly& acc0, RnsPoly& acc1) {
    size_t n = core.n;
    for (size_t i = 0; i < ct.active(); ++i) {
        uint64_t q = core.primes[i];
        auto [v, vs] = s.res[i];
        for (auto [part, acc] : {std::pair{&ct.c0, &acc0}, std::pair{&ct.c1, &acc1}}) {
            const auto& src = part->res[i];
            auto& dst = acc->res[i];
            for (size_t k = 0; k < n; ++k)
                dst[k] = add_mod(dst[k], mul_mod_shoup(src[k], v, vs, q), q);
        }
    }
}

inline Ciphertext take_product_sum(const PublicContext& ctx, RnsPoly&& acc0, RnsPoly&& acc1,
                                   size_t level, double scale, double bias) {
    Ciphertext ct;
    ct.c0 = std::move(acc0);
    ct.c1 = std::move(acc1);
    ct.level = level;
    ct.scale = scale;
    rescale_inplace(ctx, ct);
    return add_plain(ctx, ct, encode_constant(ctx, bias, ct.level, ct.scale));
}

inline RnsPoly zero_poly(const ContextCore& core, size_t active) {
    RnsPoly p;
    p.res.assign(active, std::vector<uint64_t>(core.n, 0));
    return p;
}

}  // namespace detail

/**
 * y = x w + b on a column-batched matrix: output column k is the scalar
 * combination sum_j x_col_j * w[j, k] plus a broadcast bias.  No rotations,
 * one level consumed.
 */
inline EncryptedMatrix he_linear_batched(const PublicContext& ctx, const EncryptedMatrix& em,
                                         const Tensor& w, const Tensor& b) {
    const auto& core = *ctx.core;
    detail::require_linear_operands(core, em, w, b);
    if (em.mode != BatchMode::Batched)
        throw DimensionError("he_linear_batched expects a column-batched matrix");
    size_t in = w.dim(0), out = w.dim(1);
    size_t active = em.cts.front().active();
    double wscale = core.params.scale;

    EncryptedMatrix y;
    y.mode = BatchMode::Batched;
    y.rows = em.rows;
    y.cols = out;
    for (size_t k = 0; k < out; ++k) {
        auto acc0 = detail::zero_poly(core, active);
        auto acc1 = detail::zero_poly(core, active);
        for (size_t j = 0; j < in; ++j) {
            auto s = detail::scaled_scalar(core, w(j, k), wscale, active);
            if (s.zero) continue;
            detail::axpy_scalar(core, em.cts[j], s, acc0, acc1);
        }
        y.cts.push_back(detail::take_product_sum(ctx, std::move(acc0), std::move(acc1),
                                                 em.level(), em.scale() * wscale, b[k]));
    }
    return y;
}

/**
 * y = x w + b on a per-entry matrix: each output entry is its own scalar
 * combination of the input row's entry ciphertexts.  No rotations, one level
 * consumed, rows * out ciphertexts produced.
 */
inline EncryptedMatrix he_linear_per_entry(const PublicContext& ctx,
                                           const EncryptedMatrix& em, const Tensor& w,
                                           const Tensor& b) {
    const auto& core = *ctx.core;
    detail::require_linear_operands(core, em, w, b);
    if (em.mode != BatchMode::PerEntry)
        throw DimensionError("he_linear_per_entry expects a per-entry matrix");
    size_t in = w.dim(0), out = w.dim(1);
    size_t active = em.cts.front().active();
    double wscale = core.params.scale;

    std::vector<std::vector<detail::ScaledScalar>> wk(out);
    for (size_t k = 0; k < out; ++k) {
        wk[k].reserve(in);
        for (size_t j = 0; j < in; ++j)
            wk[k].push_back(detail::scaled_scalar(core, w(j, k), wscale, active));
    }
    EncryptedMatrix y;
    y.mode = BatchMode::PerEntry;
    y.rows = em.rows;
    y.cols = out;
    for (size_t r = 0; r < em.rows; ++r)
        for (size_t k = 0; k < out; ++k) {
            auto acc0 = detail::zero_poly(core, active);
            auto acc1 = detail::zero_poly(core, active);
            for (size_t j = 0; j < in; ++j) {
                if (wk[k][j].zero) continue;
                detail::axpy_scalar(core, em.cts[r * in + j], wk[k][j], acc0, acc1);
            }
            y.cts.push_back(detail::take_product_sum(ctx, std::move(acc0), std::move(acc1),
                                                     em.level(), em.scale() * wscale, b[k]));
        }
    return y;
}

/** Baby-step count for the diagonal method. */
inline size_t he_linear_baby_steps(size_t in) {
    return size_t(std::ceil(std::sqrt(double(in))));
}

/**
 * The left-rotation amounts he_linear_per_row needs for an [in, out] weight:
 * baby steps 1..B-1 and every giant multiple of B in [-(out-1), in-1],
 * negative giants expressed as slots - |g|.
 */
inline std::vector<size_t> he_linear_rotations(size_t in, size_t out, size_t slots) {
    size_t B = he_linear_baby_steps(in);
    std::vector<size_t> steps;
    for (size_t r = 1; r < B && r < in; ++r) steps.push_back(r);
    for (size_t g = B; g + 1 <= in; g += B) steps.push_back(g);
    for (size_t g = B; out >= 2 && g <= ((out - 2) / B + 1) * B; g += B)
        steps.push_back((slots - g) % slots);
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    steps.erase(std::remove(steps.begin(), steps.end(), size_t(0)), steps.end());
    return steps;
}

/**
 * y = x w + b on a per-row matrix via the diagonal method with baby-step /
 * giant-step grouping: every diagonal d = g + r is applied as
 * rot(diag ⊙ rot(row, r), g), with the baby products accumulated in the
 * transform domain so each giant group costs one inverse pass and one
 * rotation.  Requires in + out - 1 slots of headroom and consumes one level.
 */
inline EncryptedMatrix he_linear_per_row(const PublicContext& ctx, const EncryptedMatrix& em,
                                         const Tensor& w, const Tensor& b) {
    const auto& core = *ctx.core;
    detail::require_linear_operands(core, em, w, b);
    if (em.mode != BatchMode::PerRow)
        throw DimensionError("he_linear_per_row expects a per-row matrix");
    size_t in = w.dim(0), out = w.dim(1);
    if (in + out - 1 > core.slots)
        throw CapacityError("diagonal span exceeds slot capacity");
    size_t n = core.n, slots = core.slots;
    size_t level = em.level();
    size_t active = em.cts.front().active();
    double wscale = core.params.scale;

    // Giant groups g = m B covering every diagonal in [-(out-1), in-1].
    long B = long(he_linear_baby_steps(in));
    long m_min = -(((long(out) - 1) + B - 1) / B);
    long m_max = (long(in) - 1) / B;

    // Transform-domain diagonal plaintexts, shared by every row.
    // pt_{g,r}[i] = w[i - g + (g + r), i - g] = diag_{g+r} shifted up by g.
    struct GroupPts {
        long g = 0;
        std::vector<std::pair<size_t, std::vector<std::vector<uint64_t>>>> terms;
    };
    std::vector<GroupPts> groups;
    for (long m = m_min; m <= m_max; ++m) {
        GroupPts grp;
        grp.g = m * B;
        for (long r = 0; r < B; ++r) {
            long d = grp.g + r;
            if (d < -(long(out) - 1) || d > long(in) - 1) continue;
            std::vector<double> pt_slots(slots, 0.0);
            bool any = false;
            for (long k = std::max(0l, -d); k < long(out) && k + d < long(in); ++k) {
                double v = w(size_t(k + d), size_t(k));
                if (v == 0.0) continue;
                any = true;
                pt_slots[size_t((k + grp.g + long(slots)) % long(slots))] = v;
            }
            if (!any) continue;
            Plaintext pt = encode(ctx, pt_slots, level, wscale);
            std::vector<std::vector<uint64_t>> ntt(active);
            for (size_t i = 0; i < active; ++i) {
                ntt[i] = std::move(pt.poly.res[i]);
                core.tables[i].forward(ntt[i].data());
            }
            grp.terms.emplace_back(size_t(r), std::move(ntt));
        }
        if (!grp.terms.empty()) groups.push_back(std::move(grp));
    }

    std::vector<uint8_t> have(size_t(B), 0);
    for (const auto& grp : groups)
        for (const auto& [r, ntt] : grp.terms) have[r] = 1;

    Plaintext bias;
    EncryptedMatrix y;
    y.mode = BatchMode::PerRow;
    y.rows = em.rows;
    y.cols = out;
    for (size_t row = 0; row < em.rows; ++row) {
        // Baby rotations of the row, then their forward transforms.
        std::vector<Ciphertext> rv(static_cast<size_t>(B));
        for (long r = 0; r < B; ++r) {
            if (!have[size_t(r)]) continue;
            rv[size_t(r)] = rotate(ctx, em.cts[row], size_t(r));
            for (size_t i = 0; i < active; ++i) {
                core.tables[i].forward(rv[size_t(r)].c0.res[i].data());
                core.tables[i].forward(rv[size_t(r)].c1.res[i].data());
            }
        }

        Ciphertext sum;
        bool first = true;
        std::vector<unsigned __int128> lazy0(n), lazy1(n);
        for (const auto& grp : groups) {
            Ciphertext part;
            part.level = level;
            part.scale = em.scale() * wscale;
            part.c0.res.resize(active);
            part.c1.res.resize(active);
            for (size_t i = 0; i < active; ++i) {
                uint64_t q = core.primes[i];
                std::fill(lazy0.begin(), lazy0.end(), 0);
                std::fill(lazy1.begin(), lazy1.end(), 0);
                for (const auto& [r, ntt] : grp.terms) {
                    const auto& p = ntt[i];
                    const auto& x0 = rv[r].c0.res[i];
                    const auto& x1 = rv[r].c1.res[i];
                    for (size_t k = 0; k < n; ++k) {
                        lazy0[k] += (unsigned __int128)(p[k]) * x0[k];
                        lazy1[k] += (unsigned __int128)(p[k]) * x1[k];
                    }
                }
                auto& d0 = part.c0.res[i];
                auto& d1 = part.c1.res[i];
                d0.resize(n);
                d1.resize(n);
                for (size_t k = 0; k < n; ++k) {
                    d0[k] = uint64_t(lazy0[k] % q);
                    d1[k] = uint64_t(lazy1[k] % q);
                }
                core.tables[i].inverse(d0.data());
                core.tables[i].inverse(d1.data());
            }
            if (grp.g != 0)
                part = rotate(ctx, part, size_t((grp.g + long(slots)) % long(slots)));
            sum = first ? std::move(part) : add(ctx, sum, part);
            first = false;
        }
        if (first) {  // all-zero weight: a zero ciphertext at product scale
            sum.level = level;
            sum.scale = em.scale() * wscale;
            sum.c0 = detail::zero_poly(core, active);
            sum.c1 = detail::zero_poly(core, active);
        }
        rescale_inplace(ctx, sum);
        if (row == 0) bias = encode(ctx, b.vec(), sum.level, sum.scale);
        y.cts.push_back(add_plain(ctx, sum, bias));
    }
    return y;
}

/** Dispatch on the matrix layout. */
inline EncryptedMatrix he_linear(const PublicContext& ctx, const EncryptedMatrix& em,
                                 const Tensor& w, const Tensor& b) {
    switch (em.mode) {
        case BatchMode::PerRow: return he_linear_per_row(ctx, em, w, b);
        case BatchMode::Batched: return he_linear_batched(ctx, em, w, b);
        case BatchMode::PerEntry: return he_linear_per_entry(ctx, em, w, b);
    }
    throw DimensionError("unknown matrix layout");
}

// ==== Serialization ====

inline constexpr uint32_t kEmMagic = 0x4D455348;  // "HSEM"

inline Bytes serialize(const PublicContext& ctx, const EncryptedMatrix& em) {
    detail::require_matrix(*ctx.core, em);
    ByteWriter w;
    w.u32(kEmMagic);
    w.u8(kSerialVersion);
    w.u8(uint8_t(em.mode));
    w.u32(uint32_t(em.rows));
    w.u32(uint32_t(em.cols));
    for (const auto& ct : em.cts) {
        Bytes blob = serialize(ctx, ct);
        w.u32(uint32_t(blob.size()));
        w.bytes(blob);
    }
    return w.take();
}

/** Exact byte count serialize() will produce for this matrix. */
inline size_t serialized_size(const PublicContext& ctx, const EncryptedMatrix& em) {
    size_t total = 4 + 1 + 1 + 4 + 4;
    for (const auto& ct : em.cts) total += 4 + serialized_size(ctx, ct);
    return total;
}

inline EncryptedMatrix deserialize_encrypted_matrix(const PublicContext& ctx,
                                                    const Bytes& bytes) {
    ByteReader r(bytes);
    if (r.u32() != kEmMagic) throw SerializationError("bad matrix magic");
    if (r.u8() != kSerialVersion) throw SerializationError("bad matrix version");
    uint8_t mode = r.u8();
    if (mode < 1 || mode > 3) throw SerializationError("bad matrix layout tag");
    EncryptedMatrix em;
    em.mode = BatchMode(mode);
    em.rows = r.u32();
    em.cols = r.u32();
    size_t count = detail::expected_ct_count(em.mode, em.rows, em.cols);
    if (count == 0 || count > (1u << 22)) throw SerializationError("bad matrix shape");
    for (size_t c = 0; c < count; ++c) {
        size_t len = r.u32();
        em.cts.push_back(deserialize_ciphertext(ctx, r.bytes(len)));
    }
    if (!r.done()) throw SerializationError("trailing matrix bytes");
    try {
        detail::require_matrix(*ctx.core, em);
    } catch (const Error& e) {
        throw SerializationError(e.what());
    }
    return em;
}

}  // namespace hesplit::ckks
