// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <thread>

#include "hesplit/split/engine.hpp"
#include "hesplit/split/store.hpp"

using namespace hesplit;
using namespace hesplit::split;

namespace {

std::pair<channel::KeyRing, channel::KeyRing> paired_rings(uint64_t seed) {
    Rng rng(seed);
    channel::KeyRing a = channel::setup_keys(rng);
    channel::KeyRing b = channel::setup_keys(rng);
    channel::install_peer(a, channel::public_identity(b));
    channel::install_peer(b, channel::public_identity(a));
    return {a, b};
}

TrainConfig plain_cfg(size_t epochs = 2) {
    TrainConfig c;
    c.eta = 1e-3;
    c.batch = 4;
    c.epochs = epochs;
    c.variant = Variant::M1;
    c.mode = Mode::SplitPlain;
    c.seed = 11;
    return c;
}

struct Snapshot {
    std::vector<ModelParams> local;
    std::vector<ClientParams> client;
    std::vector<ServerParams> server;
};

double params_gap(const ClientParams& a, const ClientParams& b) {
    double d = a.w1.max_abs_diff(b.w1);
    d = std::max(d, a.b1.max_abs_diff(b.b1));
    d = std::max(d, a.w2.max_abs_diff(b.w2));
    d = std::max(d, a.b2.max_abs_diff(b.b2));
    return d;
}

double params_gap(const ServerParams& a, const ServerParams& b) {
    return std::max(a.w.max_abs_diff(b.w), a.b.max_abs_diff(b.b));
}

/** Records every outbound frame type while forwarding it unchanged. */
class TypeTap : public channel::ByteChannel {
public:
    explicit TypeTap(channel::ByteChannel& inner) : inner_(inner) {}
    void send_frame(const Bytes& frame) override {
        types.push_back(channel::decode_frame(frame).type);
        inner_.send_frame(frame);
    }
    Bytes recv_frame() override { return inner_.recv_frame(); }
    std::vector<channel::MsgType> types;

private:
    channel::ByteChannel& inner_;
};

double mean_untrained_loss(const TrainConfig& cfg, const Dataset& ds) {
    ArchSpec arch = arch_for(cfg.variant);
    Rng rng(cfg.seed);
    ModelParams p = init_params(arch, rng);
    Tensor logits = model_forward(p, arch, ds.x);
    return ce_loss(softmax(logits), one_hot(ds.y, arch.classes));
}

}  // namespace

TEST_CASE("config files parse with comments and overrides") {
    const char* path = "/tmp/hesplit_cfg_test.conf";
    {
        std::FILE* f = std::fopen(path, "w");
        std::fputs("# training setup\nmode = split-he\nvariant = M2\neta = 0.005\n"
                   "batch = 8\nepochs = 3\npoly = 4096\nchain = 40,20,20\n"
                   "scale_bits = 21\nbatch_encrypt = false\nseed = 99\n",
                   f);
        std::fclose(f);
    }
    TrainConfig c = parse_config_file(path);
    CHECK(c.mode == Mode::SplitHE);
    CHECK(c.variant == Variant::M2);
    CHECK(c.eta == 0.005);
    CHECK(c.batch == 8);
    CHECK(c.epochs == 3);
    CHECK(c.he.poly_degree == 4096);
    CHECK(c.he.chain_bits == std::vector<int>{40, 20, 20});
    CHECK(c.he.scale == std::ldexp(1.0, 21));
    CHECK_FALSE(c.batch_encrypt);
    CHECK(c.seed == 99);
    c.validate();

    apply_setting(c, "mode", "local");
    CHECK(c.mode == Mode::Local);
    CHECK_THROWS_AS(apply_setting(c, "nonsense", "1"), Error);
    CHECK_THROWS_AS(apply_setting(c, "batch", "four"), std::exception);

    SECTION("wire round trip and validation") {
        TrainConfig back = deserialize_config(serialize(c));
        CHECK(back == c);
        Bytes cut = serialize(c);
        cut.pop_back();
        CHECK_THROWS_AS(deserialize_config(cut), SerializationError);

        TrainConfig bad = c;
        bad.batch = 0;
        CHECK_THROWS_AS(bad.validate(), ParameterError);
        bad = c;
        bad.epochs = 0;
        CHECK_THROWS_AS(bad.validate(), ParameterError);
        bad = c;
        bad.mode = Mode::SplitHE;
        bad.he.poly_degree = 1000;
        CHECK_THROWS_AS(bad.validate(), ParameterError);
    }
}

TEST_CASE("local training is deterministic and reduces the loss") {
    Dataset ds = synth_dataset(200, 1, 128, 31);
    auto [train, test] = train_test_split(ds, 0.2, 7);
    TrainConfig cfg = plain_cfg();
    cfg.mode = Mode::Local;

    TrainResult a = train_local(cfg, train, test);
    TrainResult b = train_local(cfg, train, test);
    CHECK(params_gap(a.params.client, b.params.client) == 0.0);
    CHECK(params_gap(a.params.server, b.params.server) == 0.0);
    REQUIRE(a.metrics.size() == cfg.epochs);

    double untrained = mean_untrained_loss(cfg, train);
    CHECK(a.metrics[0].loss < untrained);
    CHECK(a.metrics.back().loss < a.metrics[0].loss);
    for (const auto& m : a.metrics) {
        CHECK(m.train_acc >= 0.0);
        CHECK(m.train_acc <= 100.0);
        CHECK(m.test_acc >= 0.0);
        CHECK(m.test_acc <= 100.0);
    }
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
    Dataset ds = synth_dataset(40, 1, 128, 32);
    TrainConfig cfg = plain_cfg(1);
    cfg.mode = Mode::Local;
    cfg.eta = 0.0;

    ArchSpec arch = arch_for(cfg.variant);
    Rng rng(cfg.seed);
    ModelParams before = init_params(arch, rng);
    TrainResult r = train_local(cfg, ds, ds);
    CHECK(params_gap(before.client, r.params.client) == 0.0);
    CHECK(params_gap(before.server, r.params.server) == 0.0);
}

TEST_CASE("the two server step paths agree exactly") {
    Rng rng(41);
    Tensor am({4, 16}), g({4, 3});
    for (size_t i = 0; i < am.size(); ++i) am[i] = rng.uniform(-1, 1);
    for (size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1, 1);
    ServerParams sp1{Tensor({16, 3}), Tensor({3})};
    for (size_t i = 0; i < sp1.w.size(); ++i) sp1.w[i] = rng.uniform(-1, 1);
    for (size_t i = 0; i < sp1.b.size(); ++i) sp1.b[i] = rng.uniform(-1, 1);
    ServerParams sp2 = sp1;

    Tensor d1 = detail::server_step_plain(sp1, am, g, 0.05);
    Tensor dw = detail::xt_times(am, g);
    Tensor d2 = detail::server_step_given(sp2, g, dw, 0.05);

    CHECK(params_gap(sp1, sp2) == 0.0);
    CHECK(d1.max_abs_diff(d2) == 0.0);

    Tensor sums = detail::col_sum(g);
    for (size_t o = 0; o < 3; ++o) {
        double expect = 0;
        for (size_t s = 0; s < 4; ++s) expect += g(s, o);
        CHECK(sums[o] == expect);
    }
}

TEST_CASE("split training walks the local trajectory") {
    Dataset ds = synth_dataset(120, 1, 128, 33);
    auto [train, test] = train_test_split(ds, 0.2, 9);
    TrainConfig cfg = plain_cfg(2);

    Snapshot snap;
    TrainConfig local_cfg = cfg;
    local_cfg.mode = Mode::Local;
    TrainResult local = train_local(local_cfg, train, test,
                                    [&](size_t, const ModelParams& p) { snap.local.push_back(p); });

    auto [cring, sring] = paired_rings(42);
    auto [cch, sch] = channel::loopback_pair();
    ServerResult server_result;
    std::exception_ptr server_err;
    std::thread st([&] {
        try {
            channel::Session s(channel::Session::Role::Server, *sch, sring);
            ServerEngine server(s);
            server.on_batch = [&](size_t, const ServerParams& p) { snap.server.push_back(p); };
            server_result = server.run();
        } catch (...) {
            server_err = std::current_exception();
        }
    });
    channel::Session cs(channel::Session::Role::Client, *cch, cring);
    ClientEngine client(cfg, cs, train, test);
    client.on_batch = [&](size_t, const ClientParams& p) { snap.client.push_back(p); };
    TrainResult split = client.run();
    st.join();
    REQUIRE_FALSE(server_err);

    REQUIRE(snap.local.size() == snap.client.size());
    REQUIRE(snap.local.size() == snap.server.size());
    double worst = 0;
    for (size_t k = 0; k < snap.local.size(); ++k) {
        worst = std::max(worst, params_gap(snap.local[k].client, snap.client[k]));
        worst = std::max(worst, params_gap(snap.local[k].server, snap.server[k]));
    }
    CHECK(worst <= 1e-9);

    REQUIRE(split.metrics.size() == local.metrics.size());
    for (size_t e = 0; e < split.metrics.size(); ++e) {
        CHECK(split.metrics[e].loss == local.metrics[e].loss);
        CHECK(split.metrics[e].train_acc == local.metrics[e].train_acc);
        CHECK(split.metrics[e].test_acc == local.metrics[e].test_acc);
        CHECK(split.metrics[e].bytes_c2s > 0);
        CHECK(split.metrics[e].bytes_s2c > 0);
    }
    // Same batch count both epochs, deterministic payloads: equal byte columns.
    CHECK(split.metrics[0].bytes_c2s == split.metrics[1].bytes_c2s);
    CHECK(server_result.train_batches == snap.server.size());
}

TEST_CASE("the twelve-lead variant splits identically too") {
    Dataset ds = synth_dataset(16, 12, 1000, 34);
    TrainConfig cfg = plain_cfg(1);
    cfg.variant = Variant::M3;
    cfg.seed = 13;

    TrainConfig local_cfg = cfg;
    local_cfg.mode = Mode::Local;
    TrainResult local = train_local(local_cfg, ds, ds);

    auto [cring, sring] = paired_rings(43);
    auto [cch, sch] = channel::loopback_pair();
    std::exception_ptr server_err;
    ServerResult server_result;
    std::thread st([&] {
        try {
            channel::Session s(channel::Session::Role::Server, *sch, sring);
            ServerEngine server(s);
            server_result = server.run();
        } catch (...) {
            server_err = std::current_exception();
        }
    });
    channel::Session cs(channel::Session::Role::Client, *cch, cring);
    ClientEngine client(cfg, cs, ds, ds);
    TrainResult split = client.run();
    st.join();
    REQUIRE_FALSE(server_err);

    CHECK(params_gap(local.params.client, split.params.client) == 0.0);
    CHECK(params_gap(local.params.server, server_result.params) == 0.0);
    CHECK(split.metrics.back().test_acc == local.metrics.back().test_acc);
}

TEST_CASE("encrypted training completes with the formal first round") {
    Dataset train = synth_dataset(12, 1, 128, 35);
    Dataset test = synth_dataset(8, 1, 128, 36);
    TrainConfig cfg = plain_cfg(1);
    cfg.mode = Mode::SplitHE;
    cfg.he = {2048, {18, 18, 18}, std::ldexp(1.0, 16)};
    cfg.seed = 17;

    auto [cring, sring] = paired_rings(44);
    auto [cch, sch] = channel::loopback_pair();
    TypeTap ctap(*cch), stap(*sch);
    std::exception_ptr server_err;
    ServerResult server_result;
    std::thread st([&] {
        try {
            channel::Session s(channel::Session::Role::Server, stap, sring);
            ServerEngine server(s);
            server_result = server.run();
        } catch (...) {
            server_err = std::current_exception();
        }
    });
    channel::Session cs(channel::Session::Role::Client, ctap, cring);
    ClientEngine client(cfg, cs, train, test);
    TrainResult r = client.run();
    st.join();
    REQUIRE_FALSE(server_err);

    REQUIRE(r.metrics.size() == 1);
    CHECK(std::isfinite(r.metrics[0].loss));
    CHECK(r.metrics[0].bytes_c2s > r.metrics[0].bytes_s2c);  // encrypted maps dominate
    CHECK(server_result.train_batches == 3);

    using channel::MsgType;
    std::vector<MsgType> want_client{MsgType::Sync,         MsgType::M1Setup,
                                     MsgType::M3Grad,       MsgType::TrainAmHe,
                                     MsgType::TrainGradOut, MsgType::TrainAmHe,
                                     MsgType::TrainGradOut};
    REQUIRE(ctap.types.size() >= want_client.size());
    for (size_t i = 0; i < want_client.size(); ++i) CHECK(ctap.types[i] == want_client[i]);
    CHECK(ctap.types.back() == MsgType::Done);

    // 3 train batches (first formal), then 3 train-set + 2 test-set eval chunks.
    std::vector<MsgType> want_server{MsgType::Sync,       MsgType::M2Eval,
                                     MsgType::M4GradPrime, MsgType::TrainOutHe,
                                     MsgType::TrainGradAm, MsgType::TrainOutHe,
                                     MsgType::TrainGradAm, MsgType::EvalOutHe,
                                     MsgType::EvalOutHe,   MsgType::EvalOutHe,
                                     MsgType::EvalOutHe,   MsgType::EvalOutHe};
    REQUIRE(stap.types == want_server);
}

TEST_CASE("the server never receives activation-map bytes in encrypted mode") {
    Dataset train = synth_dataset(4, 1, 128, 37);
    Dataset test = synth_dataset(4, 1, 128, 38);
    TrainConfig cfg = plain_cfg(1);
    cfg.mode = Mode::SplitHE;
    cfg.he = {2048, {18, 18, 18}, std::ldexp(1.0, 16)};
    cfg.batches = 1;
    cfg.seed = 19;

    std::vector<Bytes> am_rows;  // raw byte images of every outbound map row
    auto collect = [&](const Tensor& am) {
        for (size_t i = 0; i < am.dim(0); ++i) {
            const auto* p = reinterpret_cast<const uint8_t*>(&am(i, 0));
            am_rows.emplace_back(p, p + am.dim(1) * sizeof(double));
        }
    };
    std::vector<Bytes> server_saw;

    auto [cring, sring] = paired_rings(45);
    auto [cch, sch] = channel::loopback_pair();
    std::exception_ptr server_err;
    std::thread st([&] {
        try {
            channel::Session s(channel::Session::Role::Server, *sch, sring);
            ServerEngine server(s);
            server.on_payload = [&](channel::MsgType, const Bytes& b) { server_saw.push_back(b); };
            server.run();
        } catch (...) {
            server_err = std::current_exception();
        }
    });
    channel::Session cs(channel::Session::Role::Client, *cch, cring);
    ClientEngine client(cfg, cs, train, test);
    client.on_activation = collect;
    client.run();
    st.join();
    REQUIRE_FALSE(server_err);

    REQUIRE_FALSE(am_rows.empty());
    REQUIRE_FALSE(server_saw.empty());
    size_t leaks = 0;
    for (const Bytes& payload : server_saw)
        for (const Bytes& row : am_rows)
            if (std::search(payload.begin(), payload.end(), row.begin(), row.end()) !=
                payload.end())
                ++leaks;
    CHECK(leaks == 0);

    SECTION("the scanner does flag the plaintext protocol") {
        std::vector<Bytes> plain_rows, plain_saw;
        auto [cr2, sr2] = paired_rings(46);
        auto [cc2, sc2] = channel::loopback_pair();
        TrainConfig pcfg = cfg;
        pcfg.mode = Mode::SplitPlain;
        std::exception_ptr err2;
        std::thread st2([&] {
            try {
                channel::Session s(channel::Session::Role::Server, *sc2, sr2);
                ServerEngine server(s);
                server.on_payload = [&](channel::MsgType, const Bytes& b) {
                    plain_saw.push_back(b);
                };
                server.run();
            } catch (...) {
                err2 = std::current_exception();
            }
        });
        channel::Session cs2(channel::Session::Role::Client, *cc2, cr2);
        ClientEngine client2(pcfg, cs2, train, test);
        client2.on_activation = [&](const Tensor& am) {
            const auto* p = reinterpret_cast<const uint8_t*>(&am(0, 0));
            plain_rows.emplace_back(p, p + am.dim(1) * sizeof(double));
        };
        client2.run();
        st2.join();
        REQUIRE_FALSE(err2);
        size_t hits = 0;
        for (const Bytes& payload : plain_saw)
            for (const Bytes& row : plain_rows)
                if (std::search(payload.begin(), payload.end(), row.begin(), row.end()) !=
                    payload.end())
                    ++hits;
        CHECK(hits > 0);
    }
}

TEST_CASE("a server pinned to one configuration rejects another") {
    Dataset ds = synth_dataset(8, 1, 128, 39);
    TrainConfig pinned = plain_cfg(1);
    TrainConfig other = pinned;
    other.eta = 0.5;

    auto [cring, sring] = paired_rings(47);
    auto [cch, sch] = channel::loopback_pair();
    bool client_failed = false;
    std::thread ct([&] {
        try {
            channel::Session cs(channel::Session::Role::Client, *cch, cring);
            ClientEngine client(other, cs, ds, ds);
            client.run();
        } catch (const std::exception&) {
            client_failed = true;
        }
        cch.reset();
    });
    channel::Session ss(channel::Session::Role::Server, *sch, sring);
    ServerEngine server(ss, pinned);
    try {
        server.run();
        FAIL("server accepted a foreign configuration");
    } catch (const ProtocolError& e) {
        CHECK(e.fault() == Fault::ConfigMismatch);
    }
    sch.reset();
    ct.join();
    CHECK(client_failed);
}

TEST_CASE("delivered keys must match the agreed parameters") {
    TrainConfig cfg = plain_cfg(1);
    cfg.mode = Mode::SplitHE;
    cfg.he = {2048, {18, 18, 18}, std::ldexp(1.0, 16)};
    cfg.batches = 1;

    auto [cring, sring] = paired_rings(48);
    auto [cch, sch] = channel::loopback_pair();
    std::thread ct([&] {
        try {
            channel::Session cs(channel::Session::Role::Client, *cch, cring);
            cs.sync_client(serialize(cfg));
            // Keys for a different ring than the configuration promised.
            Rng krng(5);
            auto priv = ckks::keygen({4096, {40, 20, 20}, std::ldexp(1.0, 21)}, {}, krng);
            Bytes keys = cs.seal_segment(ckks::serialize_public(priv.pub));
            Tensor am({2, 8});
            auto em = ckks::batch_encrypt_matrix(priv.pub, am, ckks::BatchMode::Batched, krng);
            Bytes blob = ckks::serialize(priv.pub, em);
            ByteWriter w;
            w.u32(uint32_t(keys.size()));
            w.bytes(keys.data(), keys.size());
            w.bytes(blob.data(), blob.size());
            cs.send(channel::MsgType::M1Setup, w.take());
            cs.recv_any();
        } catch (const std::exception&) {
        }
        cch.reset();
    });
    channel::Session ss(channel::Session::Role::Server, *sch, sring);
    ServerEngine server(ss);
    try {
        server.run();
        FAIL("server accepted keys for foreign parameters");
    } catch (const ProtocolError& e) {
        CHECK(e.fault() == Fault::ConfigMismatch);
    }
    sch.reset();
    ct.join();
}

TEST_CASE("metrics rows serialize to well-formed CSV") {
    EpochMetrics m{3, 1.5, 0.25, 80.0, 75.0, 1000, 2000};
    std::string row = metrics_csv_row(m);
    CHECK(row == "3,1.5,0.25,80,75,1000,2000");
    CHECK(std::string(metrics_csv_header()).find("bytes_c2s") != std::string::npos);
    ServerEpoch e{1, 2.0, 10, 20};
    CHECK(server_csv_row(e) == "1,2,10,20");
}

TEST_CASE("model files round-trip each half and reject damage") {
    ArchSpec arch = arch_for(Variant::M1);
    Rng rng(17);
    ModelParams params = init_params(arch, rng);
    const std::string path = "/tmp/hesplit_model_test.hsm";

    SECTION("both halves round-trip bit-exactly") {
        save_model(path, Variant::M1, &params.client, &params.server);
        StoredModel back = load_model(path);
        CHECK(back.variant == Variant::M1);
        REQUIRE(back.has_client);
        REQUIRE(back.has_server);
        CHECK(back.params.client.w1.max_abs_diff(params.client.w1) == 0.0);
        CHECK(back.params.client.b2.max_abs_diff(params.client.b2) == 0.0);
        CHECK(back.params.server.w.max_abs_diff(params.server.w) == 0.0);
        CHECK(back.params.server.b.max_abs_diff(params.server.b) == 0.0);
    }
    SECTION("a client-only file says so") {
        save_model(path, Variant::M3, &params.client, nullptr);
        StoredModel back = load_model(path);
        CHECK(back.variant == Variant::M3);
        CHECK(back.has_client);
        CHECK_FALSE(back.has_server);
    }
    SECTION("a server-only file says so") {
        save_model(path, Variant::M2, nullptr, &params.server);
        StoredModel back = load_model(path);
        CHECK_FALSE(back.has_client);
        CHECK(back.has_server);
    }
    SECTION("a wrong magic is rejected") {
        save_model(path, Variant::M1, &params.client, nullptr);
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
        f.close();
        REQUIRE_THROWS_AS(load_model(path), SerializationError);
    }
    SECTION("a truncated file is rejected") {
        save_model(path, Variant::M1, &params.client, &params.server);
        std::ifstream in(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(all.data(), long(all.size()) / 2);
        out.close();
        REQUIRE_THROWS_AS(load_model(path), SerializationError);
    }
    std::remove(path.c_str());
}
