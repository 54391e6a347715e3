// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "hesplit/channel/session.hpp"
#include "hesplit/ckks/linear.hpp"
#include "hesplit/data.hpp"
#include "hesplit/split/config.hpp"

namespace hesplit::split {

/** One report row; byte columns are this end's wire totals for the epoch. */
struct EpochMetrics {
    size_t epoch = 0;
    double time_s = 0;
    double loss = 0;
    double train_acc = 0;
    double test_acc = 0;
    uint64_t bytes_c2s = 0;
    uint64_t bytes_s2c = 0;
};

inline const char* metrics_csv_header() {
    return "epoch,time_s,loss,train_acc,test_acc,bytes_c2s,bytes_s2c";
}

inline std::string metrics_csv_row(const EpochMetrics& m) {
    std::ostringstream os;
    os << m.epoch << "," << m.time_s << "," << m.loss << "," << m.train_acc << ","
       << m.test_acc << "," << m.bytes_c2s << "," << m.bytes_s2c;
    return os.str();
}

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> metrics;
};

namespace detail {

inline constexpr uint64_t kShuffleSalt = 0x9E3779B97F4A7C15ULL;
inline constexpr uint64_t kHeKeySalt = 0xC2B2AE3D27D4EB4FULL;
inline constexpr uint64_t kHeEncSalt = 0x165667B19E3779F9ULL;

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/** Seeded Fisher-Yates pass; both peers draw the same order from a shared rng. */
inline std::vector<size_t> epoch_order(size_t count, Rng& rng) {
    std::vector<size_t> idx(count);
    for (size_t i = 0; i < count; ++i) idx[i] = i;
    for (size_t i = count; i > 1; --i)
        std::swap(idx[i - 1], idx[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
    return idx;
}

inline Tensor gather_inputs(const Dataset& ds, const std::vector<size_t>& order, size_t lo,
                            size_t n) {
    size_t c = ds.x.dim(1), t = ds.x.dim(2);
    Tensor out({n, c, t});
    for (size_t i = 0; i < n; ++i) {
        const double* src = &ds.x(order[lo + i], 0, 0);
        std::copy(src, src + c * t, &out(i, 0, 0));
    }
    return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<size_t>& order,
                                      size_t lo, size_t n) {
    std::vector<int> y(n);
    for (size_t i = 0; i < n; ++i) y[i] = ds.y[order[lo + i]];
    return y;
}

/** g [n,m] times the transpose of w [d,m] -> [n,d]. */
inline Tensor times_wt(const Tensor& g, const Tensor& w) {
    size_t n = g.dim(0), m = g.dim(1), d = w.dim(0);
    Tensor out({n, d});
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < m; ++o) {
            double gv = g(s, o);
            if (gv == 0.0) continue;
            for (size_t j = 0; j < d; ++j) out(s, j) += gv * w(j, o);
        }
    return out;
}

/** Transpose of x [n,d] times g [n,m] -> [d,m]. */
inline Tensor xt_times(const Tensor& x, const Tensor& g) {
    size_t n = x.dim(0), d = x.dim(1), m = g.dim(1);
    Tensor out({d, m});
    for (size_t s = 0; s < n; ++s)
        for (size_t j = 0; j < d; ++j) {
            double xv = x(s, j);
            if (xv == 0.0) continue;
            for (size_t o = 0; o < m; ++o) out(j, o) += xv * g(s, o);
        }
    return out;
}

/** Column sums of g [n,m]; the batch-reduced bias gradient. */
inline Tensor col_sum(const Tensor& g) {
    size_t n = g.dim(0), m = g.dim(1);
    Tensor out({m});
    for (size_t s = 0; s < n; ++s)
        for (size_t o = 0; o < m; ++o) out[o] += g(s, o);
    return out;
}

/**
 * Server-side step when it holds the activation map in clear: derive its own
 * weight and bias gradients, apply plain gradient descent, then return the
 * activation-map gradient computed with the freshly updated weights.  The
 * local trainer calls the same function so the trajectories match bit-level.
 */
inline Tensor server_step_plain(ServerParams& sp, const Tensor& am, const Tensor& g,
                                double eta) {
    LinearGrads lg = linear_backward(g, am, sp.w);
    sgd_step(sp.w, lg.dw, eta);
    sgd_step(sp.b, lg.db, eta);
    return times_wt(g, sp.w);
}

/** Server-side step when the client supplies the weight gradient. */
inline Tensor server_step_given(ServerParams& sp, const Tensor& g, const Tensor& dw,
                                double eta) {
    sgd_step(sp.w, dw, eta);
    sgd_step(sp.b, col_sum(g), eta);
    return times_wt(g, sp.w);
}

inline Bytes tensor_bytes(const Tensor& t) {
    ByteWriter w;
    write_tensor_record(w, t);
    return w.take();
}

inline Tensor tensor_from(const Bytes& b) {
    ByteReader r(b);
    Tensor t = read_tensor_record(r);
    if (!r.done()) throw SerializationError("trailing tensor bytes");
    return t;
}

inline Bytes two_tensor_bytes(const Tensor& a, const Tensor& b) {
    ByteWriter w;
    write_tensor_record(w, a);
    write_tensor_record(w, b);
    return w.take();
}

inline std::pair<Tensor, Tensor> two_tensors_from(const Bytes& bytes) {
    ByteReader r(bytes);
    Tensor a = read_tensor_record(r);
    Tensor b = read_tensor_record(r);
    if (!r.done()) throw SerializationError("trailing tensor bytes");
    return {std::move(a), std::move(b)};
}

/** Steps per epoch once the dataset size is known. */
inline size_t resolve_batches(const TrainConfig& cfg, size_t samples) {
    size_t full = samples / cfg.batch;
    if (full == 0) throw ParameterError("dataset smaller than one batch");
    return (cfg.batches == 0 || cfg.batches > full) ? full : cfg.batches;
}

}  // namespace detail

/** Argmax accuracy of the composed model over the set, chunked to bound memory. */
inline double evaluate(const ModelParams& p, const ArchSpec& a, const Dataset& ds,
                       size_t chunk = 64) {
    size_t correct = 0;
    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t lo = 0; lo < ds.size(); lo += chunk) {
        size_t n = std::min(chunk, ds.size() - lo);
        Tensor x = detail::gather_inputs(ds, order, lo, n);
        Tensor logits = model_forward(p, a, x);
        auto y = detail::gather_labels(ds, order, lo, n);
        correct += size_t(std::llround(accuracy_pct(logits, y) * double(n) / 100.0));
    }
    return 100.0 * double(correct) / double(ds.size());
}

/**
 * Single-process training over the full stack; the server layer's update uses
 * the same step function as the split server, so a split run with the same
 * seed and data reproduces this trajectory exactly.
 */
inline TrainResult train_local(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                               const std::function<void(size_t, const ModelParams&)>& on_batch = {}) {
    cfg.validate();
    ArchSpec arch = arch_for(cfg.variant);
    if (train.x.dim(1) != arch.in_ch || train.x.dim(2) != arch.T)
        throw DimensionError("dataset shape does not match the model variant");

    Rng param_rng(cfg.seed);
    ModelParams params = init_params(arch, param_rng);
    ClientAdam adam(params.client);
    Rng shuffle_rng(cfg.seed ^ detail::kShuffleSalt);
    size_t batches = detail::resolve_batches(cfg, train.size());

    TrainResult result;
    size_t step = 0;
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto order = detail::epoch_order(train.size(), shuffle_rng);
        double loss_sum = 0;
        for (size_t b = 0; b < batches; ++b) {
            Tensor x = detail::gather_inputs(train, order, b * cfg.batch, cfg.batch);
            Tensor y1h = one_hot(detail::gather_labels(train, order, b * cfg.batch, cfg.batch),
                                 arch.classes);
            ClientCache cache;
            Tensor am = client_forward(params.client, arch, x, &cache);
            Tensor out = linear(am, params.server.w, params.server.b);
            Tensor probs = softmax(out);
            loss_sum += ce_loss(probs, y1h);
            Tensor g = ce_softmax_grad(probs, y1h);
            Tensor d_am = detail::server_step_plain(params.server, am, g, cfg.eta);
            ClientGrads cg = client_backward(params.client, arch, cache, d_am);
            adam_update(params.client, adam, cg, cfg.eta);
            if (on_batch) on_batch(step, params);
            ++step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = loss_sum / double(batches);
        m.train_acc = evaluate(params, arch, train);
        m.test_acc = evaluate(params, arch, test);
        m.time_s = detail::seconds_since(t0);
        result.metrics.push_back(m);
    }
    result.params = std::move(params);
    return result;
}

/**
 * Data-owning side of the split protocol.  Holds the convolutional stack, the
 * inputs, and the labels; in HE mode also the only copy of the secret key.
 * The first encrypted batch runs as the formal four-message round that also
 * delivers the evaluation keys.
 */
class ClientEngine {
public:
    ClientEngine(const TrainConfig& cfg, channel::Session& session, const Dataset& train,
                 const Dataset& test)
        : cfg_(cfg), session_(session), train_(train), test_(test) {
        cfg_.validate();
        if (cfg_.mode == Mode::Local) throw ParameterError("local mode does not use a session");
        arch_ = arch_for(cfg_.variant);
        if (train_.x.dim(1) != arch_.in_ch || train_.x.dim(2) != arch_.T)
            throw DimensionError("dataset shape does not match the model variant");
        cfg_.batches = detail::resolve_batches(cfg_, train_.size());
    }

    /** Called after every Adam step with the step index and current layers. */
    std::function<void(size_t, const ClientParams&)> on_batch;
    /** Every activation map before it leaves the client; for traffic audits. */
    std::function<void(const Tensor&)> on_activation;

    TrainResult run() {
        session_.sync_client(serialize(cfg_));
        const bool he = cfg_.mode == Mode::SplitHE;

        Rng param_rng(cfg_.seed);
        ModelParams init = init_params(arch_, param_rng);
        ClientParams params = std::move(init.client);
        ClientAdam adam(params);
        Rng shuffle_rng(cfg_.seed ^ detail::kShuffleSalt);
        Rng enc_rng(cfg_.seed ^ detail::kHeEncSalt);

        if (he) {
            Rng key_rng(cfg_.seed ^ detail::kHeKeySalt);
            priv_.emplace(ckks::keygen(cfg_.he, {}, key_rng));
            enc_mode_ = cfg_.batch_encrypt ? ckks::BatchMode::Batched : ckks::BatchMode::PerEntry;
        }

        TrainResult result;
        size_t step = 0;
        for (size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            auto t0 = std::chrono::steady_clock::now();
            uint64_t sent0 = session_.meter().sent, recv0 = session_.meter().received;
            auto order = detail::epoch_order(train_.size(), shuffle_rng);
            double loss_sum = 0;
            for (size_t b = 0; b < cfg_.batches; ++b) {
                Tensor x = detail::gather_inputs(train_, order, b * cfg_.batch, cfg_.batch);
                Tensor y1h = one_hot(
                    detail::gather_labels(train_, order, b * cfg_.batch, cfg_.batch),
                    arch_.classes);
                ClientCache cache;
                Tensor am = client_forward(params, arch_, x, &cache);
                if (on_activation) on_activation(am);

                Tensor out;
                const bool formal = he && step == 0;
                if (he) {
                    ckks::EncryptedMatrix em =
                        ckks::batch_encrypt_matrix(priv_->pub, am, enc_mode_, enc_rng);
                    Bytes blob = ckks::serialize(priv_->pub, em);
                    if (formal) {
                        // Evaluation keys ride sealed in front of the first batch.
                        Bytes keys = session_.seal_segment(ckks::serialize_public(priv_->pub));
                        ByteWriter w;
                        w.u32(uint32_t(keys.size()));
                        w.bytes(keys.data(), keys.size());
                        w.bytes(blob.data(), blob.size());
                        session_.send(channel::MsgType::M1Setup, w.take());
                        out = decrypt_out(session_.recv(channel::MsgType::M2Eval), cfg_.batch);
                    } else {
                        session_.send(channel::MsgType::TrainAmHe, blob);
                        out = decrypt_out(session_.recv(channel::MsgType::TrainOutHe), cfg_.batch);
                    }
                } else {
                    session_.send(channel::MsgType::TrainAm, detail::tensor_bytes(am));
                    out = detail::tensor_from(session_.recv(channel::MsgType::TrainOut));
                }

                Tensor probs = softmax(out);
                loss_sum += ce_loss(probs, y1h);
                Tensor g = ce_softmax_grad(probs, y1h);

                Bytes d_am_bytes;
                if (he) {
                    // The server cannot form the weight gradient from an
                    // encrypted activation map, so the client ships it.
                    Tensor dw = detail::xt_times(am, g);
                    session_.send(formal ? channel::MsgType::M3Grad : channel::MsgType::TrainGradOut,
                                  detail::two_tensor_bytes(g, dw));
                    d_am_bytes = session_.recv(formal ? channel::MsgType::M4GradPrime
                                                      : channel::MsgType::TrainGradAm);
                } else {
                    session_.send(channel::MsgType::TrainGradOut, detail::tensor_bytes(g));
                    d_am_bytes = session_.recv(channel::MsgType::TrainGradAm);
                }
                Tensor d_am = detail::tensor_from(d_am_bytes);

                ClientGrads cg = client_backward(params, arch_, cache, d_am);
                adam_update(params, adam, cg, cfg_.eta);
                if (on_batch) on_batch(step, params);
                ++step;
            }

            EpochMetrics m;
            m.epoch = epoch;
            m.loss = loss_sum / double(cfg_.batches);
            m.train_acc = remote_accuracy(params, train_, enc_rng);
            m.test_acc = remote_accuracy(params, test_, enc_rng);
            m.time_s = detail::seconds_since(t0);
            m.bytes_c2s = session_.meter().sent - sent0;
            m.bytes_s2c = session_.meter().received - recv0;
            result.metrics.push_back(m);
        }
        session_.send(channel::MsgType::Done, {});
        result.params.client = std::move(params);
        return result;
    }

private:
    Tensor decrypt_out(const Bytes& blob, size_t rows) {
        ckks::EncryptedMatrix em = ckks::deserialize_encrypted_matrix(priv_->pub, blob);
        if (em.rows != rows || em.cols != arch_.classes)
            throw ProtocolError(Fault::UnexpectedMessage, "evaluated batch has the wrong shape");
        return ckks::batch_decrypt_matrix(*priv_, em);
    }

    /**
     * Accuracy over a set with the linear layer evaluated by the server; in
     * HE mode the forward rides encrypted so the server still never sees a
     * plaintext activation map.
     */
    double remote_accuracy(const ClientParams& params, const Dataset& ds, Rng& enc_rng) {
        const bool he = cfg_.mode == Mode::SplitHE;
        std::vector<size_t> order(ds.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        size_t correct = 0, counted = 0;
        for (size_t lo = 0; lo + cfg_.batch <= ds.size(); lo += cfg_.batch) {
            size_t n = cfg_.batch;
            Tensor x = detail::gather_inputs(ds, order, lo, n);
            Tensor am = client_forward(params, arch_, x, nullptr);
            if (on_activation) on_activation(am);
            Tensor logits;
            if (he) {
                ckks::EncryptedMatrix em =
                    ckks::batch_encrypt_matrix(priv_->pub, am, enc_mode_, enc_rng);
                session_.send(channel::MsgType::EvalAmHe, ckks::serialize(priv_->pub, em));
                logits = decrypt_out(session_.recv(channel::MsgType::EvalOutHe), n);
            } else {
                session_.send(channel::MsgType::EvalAm, detail::tensor_bytes(am));
                logits = detail::tensor_from(session_.recv(channel::MsgType::EvalOut));
            }
            auto y = detail::gather_labels(ds, order, lo, n);
            correct += size_t(std::llround(accuracy_pct(logits, y) * double(n) / 100.0));
            counted += n;
        }
        return counted ? 100.0 * double(correct) / double(counted) : 0.0;
    }

    TrainConfig cfg_;
    channel::Session& session_;
    const Dataset& train_;
    const Dataset& test_;
    ArchSpec arch_{};
    std::optional<ckks::PrivateContext> priv_;
    ckks::BatchMode enc_mode_ = ckks::BatchMode::Batched;
};

struct ServerEpoch {
    size_t epoch = 0;
    double time_s = 0;
    uint64_t bytes_in = 0;
    uint64_t bytes_out = 0;
};

inline const char* server_csv_header() { return "epoch,time_s,bytes_in,bytes_out"; }

inline std::string server_csv_row(const ServerEpoch& e) {
    std::ostringstream os;
    os << e.epoch << "," << e.time_s << "," << e.bytes_in << "," << e.bytes_out;
    return os.str();
}

struct ServerResult {
    TrainConfig cfg;
    ServerParams params;
    std::vector<ServerEpoch> epochs;
    size_t train_batches = 0;
};

/**
 * Label-free side of the split protocol: one linear layer plus public HE
 * material.  Message-driven; it never sees inputs, labels, or the secret key,
 * and in HE mode no plaintext activation map either.
 */
class ServerEngine {
public:
    explicit ServerEngine(channel::Session& session,
                          std::optional<TrainConfig> expected = std::nullopt)
        : session_(session), expected_(std::move(expected)) {}

    /** Called after every gradient-descent step with the step index and layer. */
    std::function<void(size_t, const ServerParams&)> on_batch;
    /** Every payload as the server reads it (post-unseal); for traffic audits. */
    std::function<void(channel::MsgType, const Bytes&)> on_payload;
    /** Extra acceptance policy applied to the synced config (deployment gates). */
    std::function<bool(const TrainConfig&)> accept;

    ServerResult run() {
        Bytes cfg_bytes = session_.sync_server([&](const Bytes& proposal) {
            try {
                TrainConfig c = deserialize_config(proposal);
                if (expected_ && !(c == *expected_)) return false;
                return !accept || accept(c);
            } catch (const std::exception&) {
                return false;
            }
        });
        ServerResult result;
        result.cfg = deserialize_config(cfg_bytes);
        const TrainConfig& cfg = result.cfg;

        ArchSpec arch = arch_for(cfg.variant);
        Rng param_rng(cfg.seed);
        ModelParams init = init_params(arch, param_rng);
        ServerParams params = std::move(init.server);

        Tensor last_am;  // plain mode only: retained to form the weight gradient
        auto t0 = std::chrono::steady_clock::now();
        uint64_t in0 = session_.meter().received, out0 = session_.meter().sent;
        size_t step = 0, in_epoch = 0;

        for (;;) {
            auto [type, payload] = session_.recv_any();
            if (on_payload) on_payload(type, payload);
            using channel::MsgType;
            switch (type) {
            case MsgType::TrainAm: {
                last_am = detail::tensor_from(payload);
                Tensor out = linear(last_am, params.w, params.b);
                session_.send(MsgType::TrainOut, detail::tensor_bytes(out));
                break;
            }
            case MsgType::M1Setup: {
                ByteReader r(payload);
                size_t klen = r.u32();
                if (payload.size() < 4 + klen)
                    throw ProtocolError(Fault::MalformedFrame, "truncated key segment");
                Bytes keys(payload.begin() + 4, payload.begin() + 4 + long(klen));
                Bytes blob(payload.begin() + 4 + long(klen), payload.end());
                pub_.emplace(ckks::deserialize_public(session_.open_segment(keys)));
                if (!(pub_->params() == cfg.he))
                    throw ProtocolError(Fault::ConfigMismatch,
                                        "delivered keys disagree with the agreed parameters");
                reply_he(blob, params, MsgType::M2Eval);
                break;
            }
            case MsgType::TrainAmHe:
                reply_he(payload, params, MsgType::TrainOutHe);
                break;
            case MsgType::EvalAm: {
                Tensor am = detail::tensor_from(payload);
                session_.send(MsgType::EvalOut,
                              detail::tensor_bytes(linear(am, params.w, params.b)));
                break;
            }
            case MsgType::EvalAmHe:
                reply_he(payload, params, MsgType::EvalOutHe);
                break;
            case MsgType::TrainGradOut:
            case MsgType::M3Grad: {
                Tensor d_am;
                if (cfg.mode == Mode::SplitHE) {
                    auto [g, dw] = detail::two_tensors_from(payload);
                    d_am = detail::server_step_given(params, g, dw, cfg.eta);
                } else {
                    Tensor g = detail::tensor_from(payload);
                    if (last_am.size() == 0)
                        throw ProtocolError(Fault::UnexpectedMessage,
                                            "gradient before any activation map");
                    d_am = detail::server_step_plain(params, last_am, g, cfg.eta);
                }
                session_.send(type == MsgType::M3Grad ? MsgType::M4GradPrime
                                                      : MsgType::TrainGradAm,
                              detail::tensor_bytes(d_am));
                if (on_batch) on_batch(step, params);
                ++step;
                if (++in_epoch == cfg.batches) {
                    // An epoch row closes after its eval rounds arrive; those
                    // use Eval types, so closing here attributes eval bytes to
                    // the *next* row.  Good enough for reporting totals.
                    ServerEpoch e;
                    e.epoch = result.epochs.size();
                    e.time_s = detail::seconds_since(t0);
                    e.bytes_in = session_.meter().received - in0;
                    e.bytes_out = session_.meter().sent - out0;
                    result.epochs.push_back(e);
                    t0 = std::chrono::steady_clock::now();
                    in0 = session_.meter().received;
                    out0 = session_.meter().sent;
                    in_epoch = 0;
                }
                break;
            }
            case MsgType::Done:
                result.params = std::move(params);
                result.train_batches = step;
                return result;
            default:
                throw ProtocolError(Fault::UnexpectedMessage,
                                    std::string("server cannot handle ") +
                                        channel::msg_type_name(type));
            }
        }
    }

private:
    void reply_he(const Bytes& blob, const ServerParams& params, channel::MsgType reply) {
        if (!pub_)
            throw ProtocolError(Fault::UnexpectedMessage,
                                "encrypted payload before key delivery");
        ckks::EncryptedMatrix em = ckks::deserialize_encrypted_matrix(*pub_, blob);
        ckks::EncryptedMatrix out = ckks::he_linear(*pub_, em, params.w, params.b);
        session_.send(reply, ckks::serialize(*pub_, out));
    }

    channel::Session& session_;
    std::optional<TrainConfig> expected_;
    std::optional<ckks::PublicContext> pub_;
};

}  // namespace hesplit::split
