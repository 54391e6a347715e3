// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>

#include "hesplit/ckks/crt.hpp"
#include "hesplit/ckks/encoding.hpp"
#include "hesplit/ckks/ntt.hpp"

namespace hesplit::ckks {

// ==== Parameters ====

/** Ring degree, modulus-chain bit plan, and default encoding scale. */
struct HeParams {
    size_t poly_degree = 0;
    std::vector<int> chain_bits;
    double scale = 0;

    void validate() const {
        bool ok_degree = false;
        for (size_t d : {2048, 4096, 8192, 16384, 32768})
            if (poly_degree == d) ok_degree = true;
        if (!ok_degree) throw ParameterError("ring degree must be a power of two in [2048, 32768]");
        if (chain_bits.empty() || chain_bits.size() > 8)
            throw ParameterError("modulus chain must list 1..8 primes");
        for (int b : chain_bits)
            if (b < 14 || b > 60) throw ParameterError("chain prime bits must lie in [14, 60]");
        if (!(scale >= 2.0)) throw ParameterError("scale must be at least 2");
    }

    [[nodiscard]] size_t slot_count() const { return poly_degree / 2; }
    [[nodiscard]] size_t chain_length() const { return chain_bits.size(); }

    bool operator==(const HeParams& o) const {
        return poly_degree == o.poly_degree && chain_bits == o.chain_bits && scale == o.scale;
    }
};

/** The published parameter grid, largest ring first. */
inline std::vector<HeParams> builtin_param_sets() {
    return {
        {8192, {60, 40, 40, 60}, std::ldexp(1.0, 40)},
        {8192, {40, 21, 21, 40}, std::ldexp(1.0, 21)},
        {4096, {40, 20, 20}, std::ldexp(1.0, 21)},
        {4096, {40, 20, 40}, std::ldexp(1.0, 20)},
        {2048, {18, 18, 18}, std::ldexp(1.0, 16)},
    };
}

inline std::string param_label(const HeParams& p) {
    std::string s = "P" + std::to_string(p.poly_degree) + "-C";
    for (size_t i = 0; i < p.chain_bits.size(); ++i)
        s += (i ? "/" : "") + std::to_string(p.chain_bits[i]);
    s += "-S" + std::to_string(int(std::lround(std::log2(p.scale))));
    return s;
}

// ==== Ring elements ====

/** RNS residue stack: res[i] holds the coefficients mod the i-th prime. */
struct RnsPoly {
    std::vector<std::vector<uint64_t>> res;

    [[nodiscard]] size_t width() const { return res.size(); }
};

struct Plaintext {
    RnsPoly poly;  // coefficient domain over the active primes
    size_t level = 0;
    double scale = 0;
    bool constant = false;  // only coefficient zero populated
};

struct Ciphertext {
    RnsPoly c0, c1;  // coefficient domain over the active primes
    size_t level = 0;
    double scale = 0;

    [[nodiscard]] size_t active() const { return c0.width(); }
};

// ==== Shared context core ====

inline constexpr int kGaussSigma10x = 32;  // sigma = 3.2
inline constexpr int kGaussTail = 19;      // ~6 sigma

struct ContextCore {
    HeParams params;
    size_t n = 0, slots = 0;
    // Data primes in active order: chain[0], chain[last], then the middle
    // primes.  Rescale pops from the back, so the scale-sized middle primes
    // are consumed first and chain[0] survives to the deepest level.
    std::vector<uint64_t> primes;
    std::array<uint64_t, 2> aux_primes{};  // key-switch companion modulus P = p0 p1
    std::vector<NttTables> tables;         // per data prime
    std::array<NttTables, 2> aux_tables;
    Embedding emb;
    std::vector<CrtDecoder> crt_at_level;
    // Rescale helpers: inv_last[l][i] = (q_drop)^-1 mod q_i when dropping at level l.
    std::vector<std::vector<uint64_t>> inv_last;
    // Key-switch helpers per data prime: P mod q_i and its inverse.
    std::vector<uint64_t> p_mod_qi;
    std::vector<uint64_t> p_inv_qi;
    uint64_t inv_p0_mod_p1 = 0;
    uint64_t inv_p0_shoup = 0;
    // Barrett factors for reducing arbitrary u64 values into each modulus.
    std::vector<uint64_t> barrett_qi;
    std::array<uint64_t, 2> barrett_aux{};
    // p0 mod q_i with Shoup companion, for composing aux residues per prime.
    std::vector<uint64_t> p0_mod_qi;
    std::vector<uint64_t> p0_shoup_qi;

    [[nodiscard]] size_t active_at(size_t level) const {
        if (level >= primes.size()) throw DepthError("level beyond modulus chain");
        return primes.size() - level;
    }
    [[nodiscard]] __int128 aux_product() const {
        return __int128(aux_primes[0]) * aux_primes[1];
    }
};

inline std::shared_ptr<const ContextCore> make_core(const HeParams& params) {
    params.validate();
    auto core = std::make_shared<ContextCore>();
    core->params = params;
    core->n = params.poly_degree;
    core->slots = params.slot_count();

    // Largest primes of each exact bit size, 1 mod 2n, all distinct.
    std::map<int, size_t> need;
    for (int b : params.chain_bits) need[b]++;
    std::map<int, std::vector<uint64_t>> found;
    for (auto& [bits, cnt] : need) found[bits] = find_ntt_primes(bits, cnt, 2 * core->n);
    size_t len = params.chain_bits.size();
    std::vector<size_t> order{0};
    if (len > 1) order.push_back(len - 1);
    for (size_t i = 1; i + 1 < len; ++i) order.push_back(i);
    std::map<int, size_t> used;
    std::vector<uint64_t> chain(len);
    for (size_t i = 0; i < len; ++i) {
        int b = params.chain_bits[i];
        chain[i] = found[b][used[b]++];
    }
    for (size_t idx : order) core->primes.push_back(chain[idx]);
    auto aux = find_ntt_primes(61, 2, 2 * core->n, core->primes);
    core->aux_primes = {aux[0], aux[1]};

    Rng table_rng(0x48455350);  // fixed: tables are pure derived data
    for (uint64_t q : core->primes) core->tables.emplace_back(core->n, q, table_rng);
    core->aux_tables[0] = NttTables(core->n, aux[0], table_rng);
    core->aux_tables[1] = NttTables(core->n, aux[1], table_rng);
    core->emb = Embedding(core->n);

    for (size_t lvl = 0; lvl < len; ++lvl) {
        std::vector<uint64_t> active(core->primes.begin(),
                                     core->primes.begin() + long(len - lvl));
        core->crt_at_level.emplace_back(active);
        std::vector<uint64_t> inv;
        if (active.size() >= 2) {
            uint64_t drop = active.back();
            for (size_t i = 0; i + 1 < active.size(); ++i)
                inv.push_back(inv_mod(drop % active[i], active[i]));
        }
        core->inv_last.push_back(std::move(inv));
    }
    for (uint64_t q : core->primes) {
        uint64_t pm = uint64_t(core->aux_product() % q);
        core->p_mod_qi.push_back(pm);
        core->p_inv_qi.push_back(inv_mod(pm, q));
        core->barrett_qi.push_back(barrett_factor(q));
        uint64_t p0 = aux[0] % q;
        core->p0_mod_qi.push_back(p0);
        core->p0_shoup_qi.push_back(shoup(p0, q));
    }
    core->barrett_aux = {barrett_factor(aux[0]), barrett_factor(aux[1])};
    core->inv_p0_mod_p1 = inv_mod(aux[0] % aux[1], aux[1]);
    core->inv_p0_shoup = shoup(core->inv_p0_mod_p1, aux[1]);
    return core;
}

// ==== Keys ====

/** Shoup companions of an already-reduced value vector. */
inline std::vector<uint64_t> shoup_vec(const std::vector<uint64_t>& v, uint64_t q) {
    std::vector<uint64_t> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = shoup(v[i], q);
    return out;
}

struct PublicKey {
    // NTT domain over the data primes; *_sh are Shoup companions (derived,
    // never serialized).
    std::vector<std::vector<uint64_t>> b_ntt, a_ntt;
    std::vector<std::vector<uint64_t>> b_sh, a_sh;
};

/** One key-switch component pair per decomposition digit. */
struct KswDigit {
    // NTT domain over data primes then the two aux primes (width |C|+2);
    // *_sh are Shoup companions (derived, never serialized).
    std::vector<std::vector<uint64_t>> b_ntt, a_ntt;
    std::vector<std::vector<uint64_t>> b_sh, a_sh;
};

struct GaloisKey {
    size_t steps = 0;    // left-rotation amount this key realizes
    uint64_t elt = 0;    // Galois element 5^steps mod 2n
    std::vector<uint32_t> perm;  // coefficient permutation of sigma_elt
    std::vector<uint8_t> negate;
    // NTT-domain gather map: NTT(sigma_elt(a))[k] = NTT(a)[eval_perm[k]].
    std::vector<uint32_t> eval_perm;
    std::vector<KswDigit> digits;  // one per data prime
};

class PublicContext {
public:
    std::shared_ptr<const ContextCore> core;
    PublicKey pk;
    std::map<size_t, GaloisKey> galois;

    [[nodiscard]] const HeParams& params() const { return core->params; }
    [[nodiscard]] size_t slot_count() const { return core->slots; }
    [[nodiscard]] size_t chain_length() const { return core->primes.size(); }
    [[nodiscard]] bool has_rotation(size_t steps) const {
        return galois.count(steps % core->slots) != 0 || steps % core->slots == 0;
    }
};

class PrivateContext {
public:
    PublicContext pub;
    std::vector<int8_t> s;                     // ternary secret
    std::vector<std::vector<uint64_t>> s_ntt;  // data primes then aux
    std::vector<std::vector<uint64_t>> s_sh;   // Shoup companions of s_ntt

    [[nodiscard]] const HeParams& params() const { return pub.params(); }
};

// ==== Small samplers ====

inline std::vector<int8_t> sample_ternary(size_t n, Rng& rng) {
    std::vector<int8_t> v(n);
    for (auto& x : v) x = int8_t(rng.uniform_int(-1, 1));
    return v;
}

/**
 * Discrete Gaussian on [-kGaussTail, kGaussTail] with sigma = 3.2 via CDF
 * inversion on one uniform draw per sample.
 */
inline std::vector<int32_t> sample_gauss(size_t n, Rng& rng) {
    static const std::array<uint64_t, 2 * kGaussTail + 1> cdf = [] {
        long double sigma = (long double)(kGaussSigma10x) / 10.0L;
        std::array<long double, 2 * kGaussTail + 1> w{};
        long double total = 0;
        for (int k = -kGaussTail; k <= kGaussTail; ++k) {
            w[size_t(k + kGaussTail)] = expl(-(long double)(k) * k / (2 * sigma * sigma));
            total += w[size_t(k + kGaussTail)];
        }
        std::array<uint64_t, 2 * kGaussTail + 1> c{};
        long double acc = 0;
        for (size_t i = 0; i < c.size(); ++i) {
            acc += w[i] / total;
            c[i] = acc >= 1.0L ? UINT64_MAX : uint64_t(ldexpl(acc, 64));
        }
        c.back() = UINT64_MAX;
        return c;
    }();
    std::vector<int32_t> v(n);
    for (auto& x : v) {
        uint64_t u = rng.next_u64();
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        x = int32_t(it - cdf.begin()) - kGaussTail;
    }
    return v;
}

inline std::vector<uint64_t> reduce_signed(const int8_t* v, size_t n, uint64_t q) {
    std::vector<uint64_t> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = mod_signed(v[i], q);
    return out;
}

inline std::vector<uint64_t> reduce_signed32(const int32_t* v, size_t n, uint64_t q) {
    std::vector<uint64_t> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = mod_signed(v[i], q);
    return out;
}

// ==== Keygen ====

/** Galois element for a left rotation by `steps`: 5^steps mod 2n. */
inline uint64_t galois_elt_for(size_t steps, size_t n) {
    uint64_t m = 2 * n;
    uint64_t g = 1;
    for (size_t i = 0; i < steps; ++i) g = (g * 5) % m;
    return g;
}

inline void build_automorphism(GaloisKey& key, size_t n) {
    key.perm.resize(n);
    key.negate.resize(n);
    uint64_t m = 2 * n;
    for (size_t k = 0; k < n; ++k) {
        uint64_t e = (uint64_t(k) * key.elt) % m;
        if (e < n) {
            key.perm[k] = uint32_t(e);
            key.negate[k] = 0;
        } else {
            key.perm[k] = uint32_t(e - n);
            key.negate[k] = 1;
        }
    }
    // NTT output slot k evaluates at psi^(2 br(k) + 1); sigma_elt moves that
    // evaluation to exponent elt * (2 br(k) + 1), so the NTT-domain action is
    // the pure gather eval_perm[k] = br_inv of the target exponent.
    size_t logn = 0;
    while ((size_t(1) << logn) < n) ++logn;
    auto br = [logn](size_t i) {
        size_t r = 0;
        for (size_t b = 0; b < logn; ++b) r = (r << 1) | ((i >> b) & 1);
        return r;
    };
    key.eval_perm.resize(n);
    for (size_t k = 0; k < n; ++k) {
        uint64_t e = 2 * uint64_t(br(k)) + 1;
        uint64_t ep = (e * key.elt) % m;
        key.eval_perm[k] = uint32_t(br(size_t((ep - 1) / 2)));
    }
}

/**
 * Generates a fresh key set.  `rotations` lists the left-rotation amounts the
 * public context must support (amounts are taken mod the slot count; zero is
 * free).  Encryption and evaluation use only the public half.
 */
inline PrivateContext keygen(const HeParams& params, const std::vector<size_t>& rotations,
                             Rng& rng) {
    auto core = make_core(params);
    size_t n = core->n;
    size_t nc = core->primes.size();

    PrivateContext priv;
    priv.pub.core = core;
    priv.s = sample_ternary(n, rng);
    for (size_t i = 0; i < nc; ++i) {
        auto r = reduce_signed(priv.s.data(), n, core->primes[i]);
        core->tables[i].forward(r.data());
        priv.s_sh.push_back(shoup_vec(r, core->primes[i]));
        priv.s_ntt.push_back(std::move(r));
    }
    for (size_t a = 0; a < 2; ++a) {
        auto r = reduce_signed(priv.s.data(), n, core->aux_primes[a]);
        core->aux_tables[a].forward(r.data());
        priv.s_sh.push_back(shoup_vec(r, core->aux_primes[a]));
        priv.s_ntt.push_back(std::move(r));
    }

    // pk = (-(a s) + e, a) over the data primes, kept in NTT form.
    auto e = sample_gauss(n, rng);
    for (size_t i = 0; i < nc; ++i) {
        uint64_t q = core->primes[i];
        std::vector<uint64_t> a(n);
        for (auto& x : a) x = rng.next_u64() % q;
        auto en = reduce_signed32(e.data(), n, q);
        core->tables[i].forward(en.data());
        std::vector<uint64_t> b(n);
        for (size_t k = 0; k < n; ++k)
            b[k] = add_mod(sub_mod(0, mul_mod(a[k], priv.s_ntt[i][k], q), q), en[k], q);
        priv.pub.pk.b_sh.push_back(shoup_vec(b, q));
        priv.pub.pk.a_sh.push_back(shoup_vec(a, q));
        priv.pub.pk.a_ntt.push_back(std::move(a));
        priv.pub.pk.b_ntt.push_back(std::move(b));
    }

    // Galois keys: each digit j embeds (P * sigma_g(s)) on the j-th prime.
    for (size_t raw : rotations) {
        size_t steps = raw % core->slots;
        if (steps == 0 || priv.pub.galois.count(steps)) continue;
        GaloisKey key;
        key.steps = steps;
        key.elt = galois_elt_for(steps, n);
        build_automorphism(key, n);

        std::vector<int8_t> sg(n);
        for (size_t k = 0; k < n; ++k) {
            int8_t v = priv.s[k];
            if (key.negate[k]) v = int8_t(-v);
            sg[key.perm[k]] = v;
        }

        for (size_t j = 0; j < nc; ++j) {
            KswDigit digit;
            auto ej = sample_gauss(n, rng);
            for (size_t t = 0; t < nc + 2; ++t) {
                bool is_aux = (t >= nc);
                uint64_t q = is_aux ? core->aux_primes[t - nc] : core->primes[t];
                const NttTables& tab = is_aux ? core->aux_tables[t - nc] : core->tables[t];
                std::vector<uint64_t> a(n);
                for (auto& x : a) x = rng.next_u64() % q;
                auto en = reduce_signed32(ej.data(), n, q);
                tab.forward(en.data());
                std::vector<uint64_t> b(n);
                const auto& s_t = priv.s_ntt[t];
                for (size_t k = 0; k < n; ++k)
                    b[k] = add_mod(sub_mod(0, mul_mod(a[k], s_t[k], q), q), en[k], q);
                if (!is_aux && t == j) {
                    uint64_t pmod = core->p_mod_qi[j];
                    std::vector<uint64_t> psg(n);
                    for (size_t k = 0; k < n; ++k)
                        psg[k] = sg[k] == 0 ? 0
                                            : (sg[k] > 0 ? pmod : q - pmod);
                    tab.forward(psg.data());
                    for (size_t k = 0; k < n; ++k) b[k] = add_mod(b[k], psg[k], q);
                }
                digit.b_sh.push_back(shoup_vec(b, q));
                digit.a_sh.push_back(shoup_vec(a, q));
                digit.a_ntt.push_back(std::move(a));
                digit.b_ntt.push_back(std::move(b));
            }
            key.digits.push_back(std::move(digit));
        }
        priv.pub.galois.emplace(steps, std::move(key));
    }
    return priv;
}

// ==== Encoding ====

inline Plaintext encode(const PublicContext& ctx, const std::vector<double>& v,
                        size_t level = 0, double scale = 0) {
    const auto& core = *ctx.core;
    if (scale <= 0) scale = core.params.scale;
    if (v.size() > core.slots) throw CapacityError("vector exceeds slot capacity");
    size_t active = core.active_at(level);

    std::vector<std::complex<double>> z(v.size());
    for (size_t i = 0; i < v.size(); ++i) z[i] = {v[i], 0.0};
    auto u = core.emb.to_coeff(std::move(z));

    size_t n = core.n;
    Plaintext pt;
    pt.level = level;
    pt.scale = scale;
    pt.poly.res.resize(active);
    auto round_wide = [](double x) -> __int128 {
        // llround is only defined within int64 range; wider values keep
        // double precision, so truncating the shifted value is exact enough.
        if (std::abs(x) > 1e36) throw CapacityError("encoded coefficient overflow");
        if (std::abs(x) <= 9e18) return __int128(std::llround(x));
        return __int128(x < 0 ? x - 0.5 : x + 0.5);
    };
    std::vector<__int128> r(n);
    for (size_t k = 0; k < n / 2; ++k) {
        r[k] = round_wide(u[k].real() * scale);
        r[k + n / 2] = round_wide(u[k].imag() * scale);
    }
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        auto& dst = pt.poly.res[i];
        dst.resize(n);
        for (size_t k = 0; k < n; ++k) {
            __int128 x = r[k] % __int128(q);
            if (x < 0) x += q;
            dst[k] = uint64_t(x);
        }
    }
    return pt;
}

/** Encodes the constant polynomial c (the all-c slot vector). */
inline Plaintext encode_constant(const PublicContext& ctx, double c, size_t level,
                                 double scale) {
    const auto& core = *ctx.core;
    size_t active = core.active_at(level);
    double r = c * scale;
    if (std::abs(r) > 9e18) throw CapacityError("constant too large for this scale");
    int64_t x = std::llround(r);
    Plaintext pt;
    pt.level = level;
    pt.scale = scale;
    pt.constant = true;
    pt.poly.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        pt.poly.res[i].assign(core.n, 0);
        pt.poly.res[i][0] = mod_signed(x, core.primes[i]);
    }
    return pt;
}

inline std::vector<double> decode(const PublicContext& ctx, const Plaintext& pt,
                                  size_t count) {
    const auto& core = *ctx.core;
    if (count > core.slots) throw CapacityError("decode count exceeds slots");
    size_t n = core.n;
    size_t active = pt.poly.width();
    const CrtDecoder& dec = core.crt_at_level.at(core.primes.size() - active);

    std::vector<double> coeff(n);
    std::vector<uint64_t> res(active);
    for (size_t k = 0; k < n; ++k) {
        for (size_t i = 0; i < active; ++i) res[i] = pt.poly.res[i][k];
        coeff[k] = dec.compose_centered(res);
    }
    std::vector<std::complex<double>> u(n / 2);
    for (size_t k = 0; k < n / 2; ++k)
        u[k] = {coeff[k] / pt.scale, coeff[k + n / 2] / pt.scale};
    auto z = core.emb.to_slots(std::move(u));
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = z[i].real();
    return out;
}

// ==== Encrypt / decrypt ====

namespace detail {

inline std::vector<uint64_t> ntt_of_small(const std::vector<int8_t>& v, uint64_t q,
                                          const NttTables& tab) {
    auto r = reduce_signed(v.data(), v.size(), q);
    tab.forward(r.data());
    return r;
}

}  // namespace detail

inline Ciphertext encrypt(const PublicContext& ctx, const Plaintext& pt, Rng& rng) {
    const auto& core = *ctx.core;
    if (ctx.pk.b_ntt.empty()) throw CapabilityError("context holds no public key");
    size_t n = core.n;
    size_t active = pt.poly.width();
    if (active == 0 || active > core.primes.size())
        throw AlignmentError("plaintext level invalid");

    auto u = sample_ternary(n, rng);
    auto e0 = sample_gauss(n, rng);
    auto e1 = sample_gauss(n, rng);

    Ciphertext ct;
    ct.level = pt.level;
    ct.scale = pt.scale;
    ct.c0.res.resize(active);
    ct.c1.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        const NttTables& tab = core.tables[i];
        auto un = detail::ntt_of_small(u, q, tab);
        std::vector<uint64_t> c0(n), c1(n);
        for (size_t k = 0; k < n; ++k) {
            c0[k] = mul_mod_shoup(un[k], ctx.pk.b_ntt[i][k], ctx.pk.b_sh[i][k], q);
            c1[k] = mul_mod_shoup(un[k], ctx.pk.a_ntt[i][k], ctx.pk.a_sh[i][k], q);
        }
        tab.inverse(c0.data());
        tab.inverse(c1.data());
        for (size_t k = 0; k < n; ++k) {
            c0[k] = add_mod(add_mod(c0[k], mod_signed(e0[k], q), q), pt.poly.res[i][k], q);
            c1[k] = add_mod(c1[k], mod_signed(e1[k], q), q);
        }
        ct.c0.res[i] = std::move(c0);
        ct.c1.res[i] = std::move(c1);
    }
    return ct;
}

/**
 * Encryption by the secret-key holder: (-a s + e + m, a).  The noise is a
 * bare Gaussian instead of the public-key ring products, which matters at
 * the small scaling factors.  Wire format is identical to encrypt().
 */
inline Ciphertext encrypt_symmetric(const PrivateContext& priv, const Plaintext& pt, Rng& rng) {
    const auto& core = *priv.pub.core;
    if (priv.s.empty()) throw CapabilityError("context holds no secret key");
    size_t n = core.n;
    size_t active = pt.poly.width();
    if (active == 0 || active > core.primes.size())
        throw AlignmentError("plaintext level invalid");
    auto e = sample_gauss(n, rng);

    Ciphertext ct;
    ct.level = pt.level;
    ct.scale = pt.scale;
    ct.c0.res.resize(active);
    ct.c1.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        const NttTables& tab = core.tables[i];
        // Independent uniform residues are a uniform ring element by CRT.
        std::vector<uint64_t> a(n), prod(n);
        for (auto& x : a) x = rng.next_u64() % q;
        prod = a;
        tab.forward(prod.data());
        for (size_t k = 0; k < n; ++k) prod[k] = mul_mod(prod[k], priv.s_ntt[i][k], q);
        tab.inverse(prod.data());
        std::vector<uint64_t> c0(n);
        for (size_t k = 0; k < n; ++k)
            c0[k] = add_mod(add_mod(sub_mod(0, prod[k], q), mod_signed(e[k], q), q),
                            pt.poly.res[i][k], q);
        ct.c0.res[i] = std::move(c0);
        ct.c1.res[i] = std::move(a);
    }
    return ct;
}

inline Plaintext decrypt(const PrivateContext& priv, const Ciphertext& ct) {
    const auto& core = *priv.pub.core;
    if (priv.s.empty()) throw CapabilityError("context holds no secret key");
    size_t n = core.n;
    size_t active = ct.active();
    Plaintext pt;
    pt.level = ct.level;
    pt.scale = ct.scale;
    pt.poly.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        const NttTables& tab = core.tables[i];
        std::vector<uint64_t> t = ct.c1.res[i];
        tab.forward(t.data());
        for (size_t k = 0; k < n; ++k) t[k] = mul_mod(t[k], priv.s_ntt[i][k], q);
        tab.inverse(t.data());
        for (size_t k = 0; k < n; ++k) t[k] = add_mod(t[k], ct.c0.res[i][k], q);
        pt.poly.res[i] = std::move(t);
    }
    return pt;
}

inline std::vector<double> decrypt_decode(const PrivateContext& priv, const Ciphertext& ct,
                                          size_t count) {
    return decode(priv.pub, decrypt(priv, ct), count);
}

// ==== Arithmetic ====

namespace detail {

inline void require_aligned(const Ciphertext& a, const Ciphertext& b) {
    if (a.level != b.level) throw AlignmentError("ciphertext levels differ");
    double rel = std::abs(a.scale - b.scale) / std::max(a.scale, b.scale);
    if (rel > 1e-9) throw AlignmentError("ciphertext scales differ");
}

inline void require_aligned(const Ciphertext& a, const Plaintext& b) {
    if (a.level != b.level) throw AlignmentError("operand levels differ");
}

}  // namespace detail

inline Ciphertext add(const PublicContext& ctx, const Ciphertext& a, const Ciphertext& b) {
    detail::require_aligned(a, b);
    const auto& core = *ctx.core;
    Ciphertext r = a;
    for (size_t i = 0; i < r.active(); ++i) {
        uint64_t q = core.primes[i];
        for (size_t k = 0; k < core.n; ++k) {
            r.c0.res[i][k] = add_mod(r.c0.res[i][k], b.c0.res[i][k], q);
            r.c1.res[i][k] = add_mod(r.c1.res[i][k], b.c1.res[i][k], q);
        }
    }
    return r;
}

inline Ciphertext add_plain(const PublicContext& ctx, const Ciphertext& a, const Plaintext& p) {
    detail::require_aligned(a, p);
    double rel = std::abs(a.scale - p.scale) / std::max(a.scale, p.scale);
    if (rel > 1e-9) throw AlignmentError("plaintext scale differs from ciphertext");
    const auto& core = *ctx.core;
    Ciphertext r = a;
    for (size_t i = 0; i < r.active(); ++i) {
        uint64_t q = core.primes[i];
        for (size_t k = 0; k < core.n; ++k)
            r.c0.res[i][k] = add_mod(r.c0.res[i][k], p.poly.res[i][k], q);
    }
    return r;
}

/** Drops the last active prime; scale divides by it. */
inline void rescale_inplace(const PublicContext& ctx, Ciphertext& ct) {
    const auto& core = *ctx.core;
    size_t active = ct.active();
    if (active < 2) throw DepthError("modulus chain exhausted: cannot rescale");
    size_t n = core.n;
    uint64_t drop = core.primes[active - 1];
    const auto& inv = core.inv_last[core.primes.size() - active];
    for (auto* part : {&ct.c0, &ct.c1}) {
        const auto& last = part->res[active - 1];
        for (size_t i = 0; i + 1 < active; ++i) {
            uint64_t q = core.primes[i];
            uint64_t iq = inv[i];
            uint64_t iq_shoup = shoup(iq, q);
            auto& dst = part->res[i];
            for (size_t k = 0; k < n; ++k) {
                int64_t r = center(last[k], drop);
                uint64_t x = sub_mod(dst[k], mod_signed(r, q), q);
                dst[k] = mul_mod_shoup(x, iq, iq_shoup, q);
            }
        }
        part->res.pop_back();
    }
    ct.level += 1;
    ct.scale /= double(drop);
}

/** ct * pt without the trailing rescale; scale multiplies. */
inline Ciphertext mul_plain_raw(const PublicContext& ctx, const Ciphertext& a,
                                const Plaintext& p) {
    detail::require_aligned(a, p);
    const auto& core = *ctx.core;
    size_t n = core.n;
    Ciphertext r = a;
    r.scale = a.scale * p.scale;
    if (p.constant) {
        for (size_t i = 0; i < r.active(); ++i) {
            uint64_t q = core.primes[i];
            uint64_t c = p.poly.res[i][0];
            uint64_t cs = shoup(c, q);
            for (size_t k = 0; k < n; ++k) {
                r.c0.res[i][k] = mul_mod_shoup(r.c0.res[i][k], c, cs, q);
                r.c1.res[i][k] = mul_mod_shoup(r.c1.res[i][k], c, cs, q);
            }
        }
        return r;
    }
    for (size_t i = 0; i < r.active(); ++i) {
        uint64_t q = core.primes[i];
        const NttTables& tab = core.tables[i];
        std::vector<uint64_t> pn = p.poly.res[i];
        tab.forward(pn.data());
        for (auto* part : {&r.c0, &r.c1}) {
            auto& dst = part->res[i];
            tab.forward(dst.data());
            for (size_t k = 0; k < n; ++k) dst[k] = mul_mod(dst[k], pn[k], q);
            tab.inverse(dst.data());
        }
    }
    return r;
}

/**
 * ct * pt with automatic rescale: consumes one level.  Throws DepthError when
 * only one prime remains.
 */
inline Ciphertext mul_plain(const PublicContext& ctx, const Ciphertext& a, const Plaintext& p) {
    if (a.active() < 2) throw DepthError("modulus chain exhausted: no level left to multiply");
    Ciphertext r = mul_plain_raw(ctx, a, p);
    rescale_inplace(ctx, r);
    return r;
}

// ==== Rotation ====

namespace detail {

inline std::vector<uint64_t> apply_automorphism(const std::vector<uint64_t>& src,
                                                const GaloisKey& key, uint64_t q) {
    size_t n = src.size();
    std::vector<uint64_t> dst(n);
    for (size_t k = 0; k < n; ++k) {
        uint64_t v = src[k];
        dst[key.perm[k]] = key.negate[k] && v != 0 ? q - v : v;
    }
    return dst;
}

/**
 * c1 digit decomposition shared by several rotations of one ciphertext:
 * d[j][t] = digit j (the c1 residue at data prime j) lifted to tower t (data
 * primes then the two aux primes), forward-transformed.
 */
struct HoistedDigits {
    std::vector<std::vector<std::vector<uint64_t>>> d;
};

inline HoistedDigits hoist_decompose(const PublicContext& ctx, const Ciphertext& ct) {
    const auto& core = *ctx.core;
    size_t n = core.n;
    size_t active = ct.active();
    HoistedDigits h;
    h.d.resize(active);
    for (size_t j = 0; j < active; ++j) {
        const auto& src = ct.c1.res[j];
        h.d[j].resize(active + 2);
        for (size_t t = 0; t < active + 2; ++t) {
            bool is_aux = t >= active;
            uint64_t q = is_aux ? core.aux_primes[t - active] : core.primes[t];
            uint64_t bf = is_aux ? core.barrett_aux[t - active] : core.barrett_qi[t];
            const NttTables& tab = is_aux ? core.aux_tables[t - active] : core.tables[t];
            auto& dst = h.d[j][t];
            if (t == j) {
                dst = src;
            } else {
                dst.resize(n);
                for (size_t k = 0; k < n; ++k) dst[k] = barrett_reduce(src[k], q, bf);
            }
            tab.forward(dst.data());
        }
    }
    return h;
}

/**
 * One key-switched rotation on a prepared decomposition.  The automorphism
 * acts on transformed digits as the pure gather key.eval_perm (digits are
 * automorphed before lifting, so every tower represents the same integer),
 * which lets rotations of one ciphertext share the decomposition transforms.
 */
inline Ciphertext rotate_hoisted(const PublicContext& ctx, const Ciphertext& ct,
                                 const HoistedDigits& hd, const GaloisKey& key) {
    const auto& core = *ctx.core;
    size_t n = core.n;
    size_t active = ct.active();
    size_t nc = core.primes.size();
    size_t width = active + 2;
    const uint32_t* perm = key.eval_perm.data();

    // acc = sum_j sigma(d_j) * K_j per tower, NTT domain.
    std::vector<std::vector<uint64_t>> acc0(width), acc1(width);
    for (size_t t = 0; t < width; ++t) {
        bool is_aux = (t >= active);
        uint64_t q = is_aux ? core.aux_primes[t - active] : core.primes[t];
        size_t kt = is_aux ? nc + (t - active) : t;  // key tower index
        auto& A0 = acc0[t];
        auto& A1 = acc1[t];
        A0.assign(n, 0);
        A1.assign(n, 0);
        for (size_t j = 0; j < active; ++j) {
            const KswDigit& digit = key.digits[j];
            const uint64_t* kb = digit.b_ntt[kt].data();
            const uint64_t* kbs = digit.b_sh[kt].data();
            const uint64_t* ka = digit.a_ntt[kt].data();
            const uint64_t* kas = digit.a_sh[kt].data();
            const uint64_t* dj = hd.d[j][t].data();
            for (size_t k = 0; k < n; ++k) {
                uint64_t x = dj[perm[k]];
                A0[k] = add_mod(A0[k], mul_mod_shoup(x, kb[k], kbs[k], q), q);
                A1[k] = add_mod(A1[k], mul_mod_shoup(x, ka[k], kas[k], q), q);
            }
        }
    }
    for (size_t t = 0; t < active; ++t) {
        core.tables[t].inverse(acc0[t].data());
        core.tables[t].inverse(acc1[t].data());
    }
    for (size_t a = 0; a < 2; ++a) {
        core.aux_tables[a].inverse(acc0[active + a].data());
        core.aux_tables[a].inverse(acc1[active + a].data());
    }

    // Exact divide-and-round by P: compose each aux residue pair into
    // lift and sign, then correct and scale by P^-1 on every data prime.
    uint64_t p0 = core.aux_primes[0], p1 = core.aux_primes[1];
    unsigned __int128 big_p = (unsigned __int128)(p0)*p1;
    unsigned __int128 half_p = big_p / 2;
    uint64_t bfp1 = core.barrett_aux[1];
    const auto& a0r0 = acc0[active];
    const auto& a0r1 = acc0[active + 1];
    const auto& a1r0 = acc1[active];
    const auto& a1r1 = acc1[active + 1];
    std::vector<uint64_t> lift0(n), lift1(n);
    std::vector<uint8_t> wrap0(n), wrap1(n);
    for (size_t k = 0; k < n; ++k) {
        uint64_t d0 = sub_mod(a0r1[k], barrett_reduce(a0r0[k], p1, bfp1), p1);
        uint64_t l0 = mul_mod_shoup(d0, core.inv_p0_mod_p1, core.inv_p0_shoup, p1);
        lift0[k] = l0;
        wrap0[k] = ((unsigned __int128)(p0)*l0 + a0r0[k]) > half_p;
        uint64_t d1 = sub_mod(a1r1[k], barrett_reduce(a1r0[k], p1, bfp1), p1);
        uint64_t l1 = mul_mod_shoup(d1, core.inv_p0_mod_p1, core.inv_p0_shoup, p1);
        lift1[k] = l1;
        wrap1[k] = ((unsigned __int128)(p0)*l1 + a1r0[k]) > half_p;
    }
    Ciphertext out;
    out.level = ct.level;
    out.scale = ct.scale;
    out.c0.res.resize(active);
    out.c1.res.resize(active);
    for (size_t i = 0; i < active; ++i) {
        uint64_t q = core.primes[i];
        uint64_t bf = core.barrett_qi[i];
        uint64_t p0m = core.p0_mod_qi[i], p0s = core.p0_shoup_qi[i];
        uint64_t pm = core.p_mod_qi[i];
        uint64_t pinv = core.p_inv_qi[i];
        uint64_t pinv_shoup = shoup(pinv, q);
        auto c0g = detail::apply_automorphism(ct.c0.res[i], key, q);
        auto& o0 = out.c0.res[i];
        auto& o1 = out.c1.res[i];
        o0.resize(n);
        o1.resize(n);
        const auto& A0 = acc0[i];
        const auto& A1 = acc1[i];
        for (size_t k = 0; k < n; ++k) {
            uint64_t r0 = add_mod(barrett_reduce(a0r0[k], q, bf),
                                  mul_mod_shoup(barrett_reduce(lift0[k], q, bf), p0m, p0s, q), q);
            if (wrap0[k]) r0 = sub_mod(r0, pm, q);
            uint64_t r1 = add_mod(barrett_reduce(a1r0[k], q, bf),
                                  mul_mod_shoup(barrett_reduce(lift1[k], q, bf), p0m, p0s, q), q);
            if (wrap1[k]) r1 = sub_mod(r1, pm, q);
            uint64_t u0 = mul_mod_shoup(sub_mod(A0[k], r0, q), pinv, pinv_shoup, q);
            uint64_t u1 = mul_mod_shoup(sub_mod(A1[k], r1, q), pinv, pinv_shoup, q);
            o0[k] = add_mod(c0g[k], u0, q);
            o1[k] = u1;
        }
    }
    return out;
}

/** One key-switched rotation; the key must match the desired amount. */
inline Ciphertext rotate_with_key(const PublicContext& ctx, const Ciphertext& ct,
                                  const GaloisKey& key) {
    return rotate_hoisted(ctx, ct, hoist_decompose(ctx, ct), key);
}

}  // namespace detail

/**
 * Homomorphic left rotation of the slot vector by `steps` (cyclic over the
 * slot count).  Uses the matching Galois key when present, otherwise chains
 * the power-of-two keys covering the binary expansion of `steps`.  Switching
 * divides by the aux modulus with exact rounding, so level and scale are
 * unchanged either way.
 */
inline Ciphertext rotate(const PublicContext& ctx, const Ciphertext& ct, size_t steps) {
    const auto& core = *ctx.core;
    steps %= core.slots;
    if (steps == 0) return ct;
    auto it = ctx.galois.find(steps);
    if (it != ctx.galois.end()) return detail::rotate_with_key(ctx, ct, it->second);
    std::vector<const GaloisKey*> chain;
    for (size_t bit = 1; bit < core.slots; bit <<= 1) {
        if (!(steps & bit)) continue;
        auto jt = ctx.galois.find(bit);
        if (jt == ctx.galois.end())
            throw CapabilityError("missing Galois key for rotation by " + std::to_string(steps));
        chain.push_back(&jt->second);
    }
    Ciphertext r = detail::rotate_with_key(ctx, ct, *chain.front());
    for (size_t i = 1; i < chain.size(); ++i) r = detail::rotate_with_key(ctx, r, *chain[i]);
    return r;
}

// ==== Serialization ====

inline constexpr uint32_t kCtMagic = 0x54435348;   // "HSCT"
inline constexpr uint32_t kPubMagic = 0x43505348;  // "HSPC"
inline constexpr uint32_t kGalMagic = 0x4B475348;  // "HSGK"
inline constexpr uint32_t kPrivMagic = 0x4B535348; // "HSSK"
inline constexpr uint8_t kSerialVersion = 1;

inline void serialize_params(ByteWriter& w, const HeParams& p) {
    w.u32(uint32_t(p.poly_degree));
    w.u8(uint8_t(p.chain_bits.size()));
    for (int b : p.chain_bits) w.u8(uint8_t(b));
    w.f64(p.scale);
}

inline HeParams deserialize_params(ByteReader& r) {
    HeParams p;
    p.poly_degree = r.u32();
    size_t len = r.u8();
    for (size_t i = 0; i < len; ++i) p.chain_bits.push_back(r.u8());
    p.scale = r.f64();
    p.validate();
    return p;
}

inline Bytes serialize(const PublicContext& ctx, const Ciphertext& ct) {
    ByteWriter w;
    w.u32(kCtMagic);
    w.u8(kSerialVersion);
    w.u32(uint32_t(ctx.core->n));
    w.u8(uint8_t(ctx.core->primes.size()));
    w.u8(uint8_t(ct.level));
    w.f64(ct.scale);
    for (const auto* part : {&ct.c0, &ct.c1})
        for (const auto& res : part->res)
            for (uint64_t v : res) w.u64(v);
    return w.take();
}

/** Exact byte count serialize() will produce for this ciphertext. */
inline size_t serialized_size(const PublicContext& ctx, const Ciphertext& ct) {
    return 4 + 1 + 4 + 1 + 1 + 8 + 2 * ct.active() * ctx.core->n * 8;
}

inline Ciphertext deserialize_ciphertext(const PublicContext& ctx, const Bytes& bytes) {
    ByteReader r(bytes);
    try {
        if (r.u32() != kCtMagic) throw SerializationError("bad ciphertext magic");
        if (r.u8() != kSerialVersion) throw SerializationError("bad ciphertext version");
        if (r.u32() != ctx.core->n) throw SerializationError("ring degree mismatch");
        if (r.u8() != ctx.core->primes.size()) throw SerializationError("chain mismatch");
        Ciphertext ct;
        ct.level = r.u8();
        ct.scale = r.f64();
        size_t active = ctx.core->active_at(ct.level);
        if (!(ct.scale > 0) || !std::isfinite(ct.scale))
            throw SerializationError("bad ciphertext scale");
        for (auto* part : {&ct.c0, &ct.c1}) {
            part->res.resize(active);
            for (auto& res : part->res) {
                res.resize(ctx.core->n);
                for (auto& v : res) {
                    v = r.u64();
                    if (v >= ctx.core->primes[&res - part->res.data()])
                        throw SerializationError("residue out of range");
                }
            }
        }
        if (!r.done()) throw SerializationError("trailing ciphertext bytes");
        return ct;
    } catch (const DepthError&) {
        throw SerializationError("ciphertext level out of range");
    }
}

inline Bytes serialize_public(const PublicContext& ctx) {
    ByteWriter w;
    w.u32(kPubMagic);
    w.u8(kSerialVersion);
    serialize_params(w, ctx.params());
    for (const auto* half : {&ctx.pk.b_ntt, &ctx.pk.a_ntt})
        for (const auto& res : *half)
            for (uint64_t v : res) w.u64(v);
    return w.take();
}

inline PublicContext deserialize_public(const Bytes& bytes) {
    ByteReader r(bytes);
    if (r.u32() != kPubMagic) throw SerializationError("bad public context magic");
    if (r.u8() != kSerialVersion) throw SerializationError("bad public context version");
    PublicContext ctx;
    ctx.core = make_core(deserialize_params(r));
    size_t n = ctx.core->n, nc = ctx.core->primes.size();
    for (auto* half : {&ctx.pk.b_ntt, &ctx.pk.a_ntt}) {
        half->resize(nc);
        for (auto& res : *half) {
            res.resize(n);
            for (auto& v : res) {
                v = r.u64();
                if (v >= ctx.core->primes[size_t(&res - half->data())])
                    throw SerializationError("public key residue out of range");
            }
        }
    }
    if (!r.done()) throw SerializationError("trailing public context bytes");
    for (size_t i = 0; i < nc; ++i) {
        ctx.pk.b_sh.push_back(shoup_vec(ctx.pk.b_ntt[i], ctx.core->primes[i]));
        ctx.pk.a_sh.push_back(shoup_vec(ctx.pk.a_ntt[i], ctx.core->primes[i]));
    }
    return ctx;
}

/** Galois key material only (the rotation-key blob a peer evaluator needs). */
inline Bytes serialize_galois(const PublicContext& ctx) {
    ByteWriter w;
    w.u32(kGalMagic);
    w.u8(kSerialVersion);
    w.u32(uint32_t(ctx.galois.size()));
    for (const auto& [steps, key] : ctx.galois) {
        w.u32(uint32_t(steps));
        for (const auto& digit : key.digits)
            for (const auto* half : {&digit.b_ntt, &digit.a_ntt})
                for (const auto& res : *half)
                    for (uint64_t v : res) w.u64(v);
    }
    return w.take();
}

inline void load_galois(PublicContext& ctx, const Bytes& bytes) {
    ByteReader r(bytes);
    if (r.u32() != kGalMagic) throw SerializationError("bad rotation key magic");
    if (r.u8() != kSerialVersion) throw SerializationError("bad rotation key version");
    size_t count = r.u32();
    size_t n = ctx.core->n, nc = ctx.core->primes.size();
    ctx.galois.clear();
    for (size_t c = 0; c < count; ++c) {
        GaloisKey key;
        key.steps = r.u32();
        if (key.steps == 0 || key.steps >= ctx.core->slots)
            throw SerializationError("rotation amount out of range");
        key.elt = galois_elt_for(key.steps, n);
        build_automorphism(key, n);
        key.digits.resize(nc);
        for (auto& digit : key.digits)
            for (auto* half : {&digit.b_ntt, &digit.a_ntt}) {
                half->resize(nc + 2);
                for (auto& res : *half) {
                    size_t t = size_t(&res - half->data());
                    uint64_t q = t < nc ? ctx.core->primes[t] : ctx.core->aux_primes[t - nc];
                    res.resize(n);
                    for (auto& v : res) {
                        v = r.u64();
                        if (v >= q) throw SerializationError("rotation key residue out of range");
                    }
                }
            }
        for (auto& digit : key.digits)
            for (size_t t = 0; t < nc + 2; ++t) {
                uint64_t q = t < nc ? ctx.core->primes[t] : ctx.core->aux_primes[t - nc];
                digit.b_sh.push_back(shoup_vec(digit.b_ntt[t], q));
                digit.a_sh.push_back(shoup_vec(digit.a_ntt[t], q));
            }
        ctx.galois.emplace(key.steps, std::move(key));
    }
    if (!r.done()) throw SerializationError("trailing rotation key bytes");
}

inline Bytes serialize_private(const PrivateContext& priv) {
    ByteWriter w;
    w.u32(kPrivMagic);
    w.u8(kSerialVersion);
    serialize_params(w, priv.params());
    for (int8_t v : priv.s) w.u8(uint8_t(v));
    Bytes pub = serialize_public(priv.pub);
    w.u64(pub.size());
    w.bytes(pub);
    Bytes gal = serialize_galois(priv.pub);
    w.u64(gal.size());
    w.bytes(gal);
    return w.take();
}

inline PrivateContext deserialize_private(const Bytes& bytes) {
    ByteReader r(bytes);
    uint32_t magic = r.u32();
    if (magic == kPubMagic)
        throw CapabilityError("blob holds a public context: no secret key material");
    if (magic != kPrivMagic) throw SerializationError("bad private context magic");
    if (r.u8() != kSerialVersion) throw SerializationError("bad private context version");
    HeParams params = deserialize_params(r);
    PrivateContext priv;
    priv.s.resize(params.poly_degree);
    for (auto& v : priv.s) {
        v = int8_t(r.u8());
        if (v < -1 || v > 1) throw SerializationError("secret key not ternary");
    }
    size_t publen = r.u64();
    priv.pub = deserialize_public(r.bytes(publen));
    size_t gallen = r.u64();
    load_galois(priv.pub, r.bytes(gallen));
    if (!r.done()) throw SerializationError("trailing private context bytes");
    const auto& core = *priv.pub.core;
    for (size_t i = 0; i < core.primes.size(); ++i) {
        auto s = reduce_signed(priv.s.data(), core.n, core.primes[i]);
        core.tables[i].forward(s.data());
        priv.s_sh.push_back(shoup_vec(s, core.primes[i]));
        priv.s_ntt.push_back(std::move(s));
    }
    for (size_t a = 0; a < 2; ++a) {
        auto s = reduce_signed(priv.s.data(), core.n, core.aux_primes[a]);
        core.aux_tables[a].forward(s.data());
        priv.s_sh.push_back(shoup_vec(s, core.aux_primes[a]));
        priv.s_ntt.push_back(std::move(s));
    }
    return priv;
}

}  // namespace hesplit::ckks
