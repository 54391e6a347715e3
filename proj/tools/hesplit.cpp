// SPDX-License-Identifier: Apache-2.0
// hesplit: train the split ECG classifier locally or across a socket, probe
// the wire with a scripted adversary proxy, dump activation maps next to
// their inputs, and benchmark the encrypted linear layer.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hesplit/attack/harness.hpp"
#include "hesplit/split/engine.hpp"
#include "hesplit/split/store.hpp"

namespace {

using namespace hesplit;
using split::Mode;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;
constexpr int kExitDetectFail = 4;

constexpr uint32_t kWeakPolyFloor = 4096;

/** Everything a run needs beyond the training hyperparameters. */
struct RunConfig {
    split::TrainConfig train;
    std::string listen = "127.0.0.1:7707";
    std::string connect = "127.0.0.1:7707";
    std::string outdir = ".";
    std::string report = "csv";  // "csv" or "csv+svg"
    bool allow_weak = false;
    uint64_t key_seed = 1;  // stand-in for out-of-band identity provisioning
    size_t synth_train = 160;
    size_t synth_test = 40;
    std::string train_data;  // .t64 dataset files override the generator
    std::string test_data;
    // dump-am
    std::string model_path;
    std::string samples = "0";
    // attack
    std::string script_path;
    size_t fuzz_tampers = 0;
    size_t fuzz_replays = 0;
    uint64_t fuzz_seed = 7;
    uint64_t session_timeout_ms = 60'000;
    // bench-he
    size_t bench_rows = 4;
    size_t bench_dim = 256;
    size_t bench_reps = 3;
};

bool app_apply(RunConfig& rc, const std::string& key, const std::string& value) {
    auto num = [&](size_t& field) { field = size_t(std::stoull(value)); };
    if (key == "listen") rc.listen = value;
    else if (key == "connect") rc.connect = value;
    else if (key == "outdir") rc.outdir = value;
    else if (key == "report") {
        if (value != "csv" && value != "csv+svg")
            throw Error("report must be csv or csv+svg");
        rc.report = value;
    } else if (key == "key_seed") rc.key_seed = std::stoull(value);
    else if (key == "synth_train") num(rc.synth_train);
    else if (key == "synth_test") num(rc.synth_test);
    else if (key == "train_data") rc.train_data = value;
    else if (key == "test_data") rc.test_data = value;
    else if (key == "allow_weak_params") rc.allow_weak = (value == "true" || value == "1");
    else if (key == "model") rc.model_path = value;
    else if (key == "samples") rc.samples = value;
    else if (key == "script") rc.script_path = value;
    else if (key == "fuzz_tampers") num(rc.fuzz_tampers);
    else if (key == "fuzz_replays") num(rc.fuzz_replays);
    else if (key == "fuzz_seed") rc.fuzz_seed = std::stoull(value);
    else if (key == "session_timeout_ms") rc.session_timeout_ms = std::stoull(value);
    else if (key == "rows") num(rc.bench_rows);
    else if (key == "dim") num(rc.bench_dim);
    else if (key == "reps") num(rc.bench_reps);
    else return false;
    return true;
}

void apply_one(RunConfig& rc, const std::string& key, const std::string& value) {
    if (!app_apply(rc, key, value)) split::apply_setting(rc.train, key, value);
}

void apply_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = split::trimmed(line.substr(0, line.find('#')));
        if (s.empty()) continue;
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            apply_one(rc, split::trimmed(s.substr(0, eq)), split::trimmed(s.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

/** File first, then HESPLIT_LISTEN / HESPLIT_CONNECT, then flags in order. */
RunConfig parse_run(const std::vector<std::string>& args, RunConfig rc = {}) {
    for (size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") apply_file(rc, args[i + 1]);
    if (const char* v = std::getenv("HESPLIT_LISTEN")) rc.listen = v;
    if (const char* v = std::getenv("HESPLIT_CONNECT")) rc.connect = v;
    for (size_t i = 0; i < args.size(); ++i) {
        std::string a = args[i];
        if (a == "--config") {
            ++i;
            continue;
        }
        if (a.rfind("--", 0) != 0) throw Error("unexpected argument: " + a);
        std::string key = a.substr(2);
        for (auto& ch : key)
            if (ch == '-') ch = '_';
        if (key == "allow_weak_params") {
            rc.allow_weak = true;
            continue;
        }
        if (i + 1 >= args.size()) throw Error("flag needs a value: " + a);
        apply_one(rc, key, args[++i]);
    }
    return rc;
}

std::pair<std::string, uint16_t> parse_address(const std::string& addr) {
    auto colon = addr.rfind(':');
    std::string host = colon == std::string::npos ? "" : addr.substr(0, colon);
    std::string port = colon == std::string::npos ? addr : addr.substr(colon + 1);
    if (host.empty()) host = "127.0.0.1";
    unsigned long p = std::stoul(port);
    if (p == 0 || p > 65535) throw Error("port out of range: " + addr);
    return {host, uint16_t(p)};
}

/** Both identities from one shared seed; each side installs the other. */
std::pair<channel::KeyRing, channel::KeyRing> derive_rings(uint64_t key_seed) {
    Rng rng(key_seed);
    channel::KeyRing c = channel::setup_keys(rng);
    channel::KeyRing s = channel::setup_keys(rng);
    channel::install_peer(c, channel::public_identity(s));
    channel::install_peer(s, channel::public_identity(c));
    return {c, s};
}

std::pair<Dataset, Dataset> provision_data(const RunConfig& rc) {
    ArchSpec arch = arch_for(rc.train.variant);
    if (!rc.train_data.empty()) {
        Dataset tr = load_dataset(rc.train_data);
        if (!rc.test_data.empty()) return {tr, load_dataset(rc.test_data)};
        return train_test_split(tr, 0.2, rc.train.seed);
    }
    // Class-interleaved generator: prefix slices stay balanced.
    Dataset all = synth_dataset(rc.synth_train + rc.synth_test, arch.in_ch, arch.T,
                                rc.train.seed ^ 0xD5A7AULL);
    return {slice_dataset(all, 0, rc.synth_train), slice_dataset(all, rc.synth_train, all.size())};
}

void require_strong_or_waived(const RunConfig& rc) {
    if (rc.train.mode == Mode::SplitHE && rc.train.he.poly_degree < kWeakPolyFloor &&
        !rc.allow_weak)
        throw Error("ring dimension " + std::to_string(rc.train.he.poly_degree) +
                    " is below the " + std::to_string(kWeakPolyFloor) +
                    " hardness floor; pass --allow-weak-params to run it anyway");
}

// ==== SVG line plots ====

struct SvgSeries {
    std::string name;
    std::vector<double> pts;
};

struct SvgPanel {
    std::string label;
    std::vector<SvgSeries> series;
};

void write_svg(const std::string& path, const std::string& title,
               const std::vector<SvgPanel>& panels) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#17becf"};
    const int width = 900, ml = 70, mr = 20, ph = 96, gap = 26, top = 40;
    int height = top + int(panels.size()) * (ph + gap) + 10;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"24\" font-size=\"16\">" << title << "</text>\n";
    int y0 = top;
    for (const SvgPanel& panel : panels) {
        double lo = 1e300, hi = -1e300;
        for (const auto& s : panel.series)
            for (double v : s.pts) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        if (!(hi > lo)) {
            hi = lo + 1.0;
            lo -= 1.0;
        }
        out << "<rect x=\"" << ml << "\" y=\"" << y0 << "\" width=\"" << width - ml - mr
            << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#ccc\"/>\n";
        out << "<text x=\"4\" y=\"" << y0 + 14 << "\" font-size=\"11\">" << panel.label
            << "</text>\n";
        out << "<text x=\"4\" y=\"" << y0 + 30 << "\" font-size=\"9\" fill=\"#666\">"
            << std::setprecision(3) << hi << "</text>\n";
        out << "<text x=\"4\" y=\"" << y0 + ph << "\" font-size=\"9\" fill=\"#666\">"
            << std::setprecision(3) << lo << "</text>\n";
        size_t ci = 0;
        int lx = ml + 8;
        for (const auto& s : panel.series) {
            const char* color = kColors[ci++ % 8];
            if (!s.name.empty()) {
                out << "<text x=\"" << lx << "\" y=\"" << y0 + 12 << "\" font-size=\"10\" fill=\""
                    << color << "\">" << s.name << "</text>\n";
                lx += int(s.name.size()) * 7 + 16;
            }
            if (s.pts.empty()) continue;
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
            size_t n = s.pts.size();
            for (size_t i = 0; i < n; ++i) {
                double fx = n == 1 ? 0.5 : double(i) / double(n - 1);
                double fy = (s.pts[i] - lo) / (hi - lo);
                out << ml + fx * (width - ml - mr) << "," << y0 + ph - fy * ph << " ";
            }
            out << "\"/>\n";
        }
        y0 += ph + gap;
    }
    out << "</svg>\n";
}

// ==== Reports ====

std::string chain_label(const ckks::HeParams& he) {
    std::string s = "[";
    for (size_t i = 0; i < he.chain_bits.size(); ++i)
        s += (i ? " " : "") + std::to_string(he.chain_bits[i]);
    return s + "]";
}

int scale_bits(const ckks::HeParams& he) { return int(std::llround(std::log2(he.scale))); }

/** One row shaped like the results table: network, mode, HE set, cost, score. */
void write_summary(const RunConfig& rc, const std::vector<split::EpochMetrics>& rows) {
    double secs = 0, bytes = 0, acc = 0;
    for (const auto& m : rows) {
        secs += m.time_s;
        bytes += double(m.bytes_c2s + m.bytes_s2c);
    }
    if (!rows.empty()) {
        secs /= double(rows.size());
        bytes /= double(rows.size());
        acc = rows.back().test_acc;
    }
    const bool he = rc.train.mode == Mode::SplitHE;
    std::ostringstream csv;
    csv << "variant,mode,batch_encrypt,poly,chain,scale_bits,seconds_per_epoch,"
           "final_test_acc,bytes_per_epoch\n";
    csv << variant_name(rc.train.variant) << "," << split::mode_name(rc.train.mode) << ","
        << (he ? (rc.train.batch_encrypt ? "true" : "false") : "-") << ","
        << (he ? std::to_string(rc.train.he.poly_degree) : "-") << ","
        << (he ? chain_label(rc.train.he) : "-") << ","
        << (he ? std::to_string(scale_bits(rc.train.he)) : "-") << "," << secs << "," << acc
        << "," << uint64_t(bytes) << "\n";
    std::ofstream out(rc.outdir + "/summary.csv");
    out << csv.str();
    std::cout << csv.str();
}

void maybe_training_svg(const RunConfig& rc, const std::vector<split::EpochMetrics>& rows) {
    if (rc.report != "csv+svg" || rows.empty()) return;
    SvgPanel loss{"loss", {{"train", {}}}};
    SvgPanel accs{"accuracy %", {{"train", {}}, {"test", {}}}};
    for (const auto& m : rows) {
        loss.series[0].pts.push_back(m.loss);
        accs.series[0].pts.push_back(m.train_acc);
        accs.series[1].pts.push_back(m.test_acc);
    }
    write_svg(rc.outdir + "/training.svg",
              std::string(variant_name(rc.train.variant)) + " " +
                  split::mode_name(rc.train.mode) + " training",
              {loss, accs});
}

// ==== Subcommands ====

int cmd_local(const std::vector<std::string>& args) {
    RunConfig rc = parse_run(args);
    rc.train.mode = Mode::Local;
    std::filesystem::create_directories(rc.outdir);
    auto [train, test] = provision_data(rc);
    std::cout << "local training: " << split::describe(rc.train) << ", " << train.size()
              << " train / " << test.size() << " test samples\n";
    split::TrainResult r = split::train_local(rc.train, train, test);
    split::save_metrics_csv(rc.outdir + "/metrics.csv", r.metrics);
    split::save_model(rc.outdir + "/model.hsm", rc.train.variant, &r.params.client,
                      &r.params.server);
    write_summary(rc, r.metrics);
    maybe_training_svg(rc, r.metrics);
    return kExitOk;
}

int cmd_client(const std::vector<std::string>& args) {
    RunConfig rc = parse_run(args);
    if (rc.train.mode == Mode::Local) rc.train.mode = Mode::SplitPlain;
    require_strong_or_waived(rc);
    std::filesystem::create_directories(rc.outdir);
    auto [train, test] = provision_data(rc);
    auto [host, port] = parse_address(rc.connect);

    channel::TcpChannel ch;
    for (int attempt = 0;; ++attempt) {
        try {
            ch = channel::connect_tcp(host, port);
            break;
        } catch (const IoError&) {
            if (attempt >= 50) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
    }
    auto [cring, sring] = derive_rings(rc.key_seed);
    (void)sring;
    channel::Session session(channel::Session::Role::Client, ch, cring);
    std::cout << "client: " << split::describe(rc.train) << " against " << host << ":" << port
              << "\n";
    split::ClientEngine engine(rc.train, session, train, test);
    split::TrainResult r = engine.run();
    split::save_metrics_csv(rc.outdir + "/metrics.csv", r.metrics);
    split::save_model(rc.outdir + "/model.hsm", rc.train.variant, &r.params.client, nullptr);
    write_summary(rc, r.metrics);
    maybe_training_svg(rc, r.metrics);
    return kExitOk;
}

int cmd_server(const std::vector<std::string>& args) {
    RunConfig rc = parse_run(args);
    std::filesystem::create_directories(rc.outdir);
    auto [host, port] = parse_address(rc.listen);
    (void)host;  // the listener binds loopback
    channel::TcpListener listener(port);
    std::cout << "server: listening on 127.0.0.1:" << listener.port() << "\n";
    channel::TcpChannel ch = listener.accept();
    auto [cring, sring] = derive_rings(rc.key_seed);
    (void)cring;
    channel::Session session(channel::Session::Role::Server, ch, sring);
    split::ServerEngine engine(session);
    engine.accept = [&](const split::TrainConfig& c) {
        return !(c.mode == Mode::SplitHE && c.he.poly_degree < kWeakPolyFloor && !rc.allow_weak);
    };
    split::ServerResult r = engine.run();
    split::save_server_csv(rc.outdir + "/server_metrics.csv", r.epochs);
    split::save_model(rc.outdir + "/server_model.hsm", r.cfg.variant, nullptr, &r.params);
    uint64_t in = 0, out = 0;
    for (const auto& e : r.epochs) {
        in += e.bytes_in;
        out += e.bytes_out;
    }
    std::cout << "server: " << split::describe(r.cfg) << " finished, " << r.train_batches
              << " gradient steps, " << in << " bytes in / " << out << " bytes out\n";
    return kExitOk;
}

// ==== dump-am ====

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    double den = std::sqrt(da * db);
    return den > 0 ? num / den : 0.0;
}

int cmd_dump_am(const std::vector<std::string>& args) {
    RunConfig rc = parse_run(args);
    std::filesystem::create_directories(rc.outdir);
    ArchSpec arch = arch_for(rc.train.variant);

    ClientParams client;
    if (!rc.model_path.empty()) {
        split::StoredModel stored = split::load_model(rc.model_path);
        if (!stored.has_client)
            throw Error("model file has no client half: " + rc.model_path);
        if (stored.variant != rc.train.variant)
            throw Error("model file was trained as " + std::string(variant_name(stored.variant)) +
                        " but the config says " + variant_name(rc.train.variant));
        client = std::move(stored.params.client);
    } else {
        std::cerr << "dump-am: no --model given; using untrained weights from seed "
                  << rc.train.seed << "\n";
        Rng rng(rc.train.seed);
        client = init_params(arch, rng).client;
    }

    auto [train, test] = provision_data(rc);
    (void)test;
    std::vector<size_t> picks;
    std::stringstream ss(rc.samples);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!split::trimmed(tok).empty()) picks.push_back(std::stoull(split::trimmed(tok)));
    if (picks.empty()) throw Error("no sample indices given");

    std::ofstream report(rc.outdir + "/dump_am_report.csv");
    report << "sample,label,best_input_ch,best_am_ch,pearson_r\n";
    const size_t t4 = arch.t_after_pool2();
    for (size_t idx : picks) {
        if (idx >= train.size())
            throw Error("sample index " + std::to_string(idx) + " out of range (have " +
                        std::to_string(train.size()) + ")");
        Dataset one = slice_dataset(train, idx, idx + 1);
        Tensor am = client_forward(client, arch, one.x, nullptr);

        // Wide CSV, AM channels value-held 4x so every series shares the time axis.
        std::string base = rc.outdir + "/dump_am_" + std::to_string(idx);
        std::ofstream csv(base + ".csv");
        csv << "t";
        for (size_t c = 0; c < arch.in_ch; ++c) csv << ",input_ch" << c;
        for (size_t c = 0; c < arch.c2; ++c) csv << ",am_ch" << c;
        csv << "\n";
        for (size_t t = 0; t < arch.T; ++t) {
            csv << t;
            for (size_t c = 0; c < arch.in_ch; ++c) csv << "," << one.x(0, c, t);
            for (size_t c = 0; c < arch.c2; ++c) {
                size_t pt = std::min(t / (arch.pool_s * arch.pool_s), t4 - 1);
                csv << "," << am(0, c * t4 + pt);
            }
            csv << "\n";
        }

        std::vector<SvgPanel> panels;
        std::vector<std::vector<double>> pooled(arch.in_ch);
        for (size_t c = 0; c < arch.in_ch; ++c) {
            SvgSeries s{"", {}};
            for (size_t t = 0; t < arch.T; ++t) s.pts.push_back(one.x(0, c, t));
            panels.push_back({"input ch " + std::to_string(c), {s}});
            pooled[c].resize(t4, 0.0);
            size_t stride = arch.pool_s * arch.pool_s;
            for (size_t p = 0; p < t4; ++p) {
                double acc = 0;
                for (size_t k = 0; k < stride; ++k) acc += one.x(0, c, p * stride + k);
                pooled[c][p] = acc / double(stride);
            }
        }
        double best_r = 0;
        size_t best_in = 0, best_am = 0;
        for (size_t c = 0; c < arch.c2; ++c) {
            SvgSeries s{"", {}};
            std::vector<double> chan(t4);
            for (size_t p = 0; p < t4; ++p) chan[p] = am(0, c * t4 + p);
            s.pts = chan;
            panels.push_back({"am ch " + std::to_string(c), {s}});
            for (size_t ic = 0; ic < arch.in_ch; ++ic) {
                double r = pearson(pooled[ic], chan);
                if (std::fabs(r) > std::fabs(best_r)) {
                    best_r = r;
                    best_in = ic;
                    best_am = c;
                }
            }
        }
        if (rc.report != "csv")
            write_svg(base + ".svg",
                      "sample " + std::to_string(idx) + " (class " +
                          std::to_string(train.y[idx]) + ")",
                      panels);
        report << idx << "," << train.y[idx] << "," << best_in << "," << best_am << ","
               << best_r << "\n";
        std::cout << "sample " << idx << ": best |r| = " << std::fabs(best_r) << " (input ch "
                  << best_in << " vs am ch " << best_am << ")\n";
    }
    std::cout << "wrote " << picks.size() << " dump(s) under " << rc.outdir << "\n";
    return kExitOk;
}

// ==== bench-he ====

int cmd_bench_he(const std::vector<std::string>& args) {
    RunConfig rc = parse_run(args);
    std::filesystem::create_directories(rc.outdir);
    const size_t rows = rc.bench_rows, dim = rc.bench_dim, classes = 5;
    Rng rng(7);
    Tensor am({rows, dim}), w({dim, classes}), b({classes});
    for (size_t i = 0; i < am.size(); ++i) am[i] = rng.uniform(-1.0, 1.0);
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.5, 0.5);
    for (size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.5, 0.5);
    Tensor want = linear(am, w, b);

    std::ofstream csv(rc.outdir + "/bench_he.csv");
    csv << "poly,chain,scale_bits,batch_encrypt,ms_per_batch,ct_bytes,max_err\n";
    std::cout << std::left << std::setw(7) << "poly" << std::setw(15) << "chain" << std::setw(7)
              << "scale" << std::setw(6) << "BE" << std::setw(14) << "ms/batch" << std::setw(12)
              << "ct bytes" << "max err\n";

    std::map<uint32_t, std::pair<uint64_t, uint64_t>> be_bytes;  // poly -> (BE, not BE)
    std::map<uint32_t, double> be_ms;
    for (const ckks::HeParams& he : ckks::builtin_param_sets()) {
        Rng key_rng(11);
        ckks::PrivateContext priv = ckks::keygen(he, {}, key_rng);
        for (bool be : {true, false}) {
            ckks::BatchMode mode = be ? ckks::BatchMode::Batched : ckks::BatchMode::PerEntry;
            double best_ms = 1e300;
            uint64_t ct_bytes = 0;
            double err = 0;
            for (size_t rep = 0; rep < rc.bench_reps; ++rep) {
                Rng enc_rng(100 + rep);
                auto t0 = std::chrono::steady_clock::now();
                ckks::EncryptedMatrix em = ckks::batch_encrypt_matrix(priv.pub, am, mode, enc_rng);
                Bytes up = ckks::serialize(priv.pub, em);
                ckks::EncryptedMatrix em2 = ckks::deserialize_encrypted_matrix(priv.pub, up);
                ckks::EncryptedMatrix evald = ckks::he_linear(priv.pub, em2, w, b);
                Bytes down = ckks::serialize(priv.pub, evald);
                ckks::EncryptedMatrix back = ckks::deserialize_encrypted_matrix(priv.pub, down);
                Tensor got = ckks::batch_decrypt_matrix(priv, back);
                double ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
                best_ms = std::min(best_ms, ms);
                ct_bytes = up.size() + down.size();
                for (size_t i = 0; i < want.size(); ++i)
                    err = std::max(err, std::fabs(got[i] - want[i]));
            }
            if (be) {
                be_bytes[he.poly_degree].first = ct_bytes;
                be_ms[he.poly_degree] = best_ms;
            } else {
                be_bytes[he.poly_degree].second = ct_bytes;
            }
            csv << he.poly_degree << "," << chain_label(he) << "," << scale_bits(he) << ","
                << (be ? "true" : "false") << "," << best_ms << "," << ct_bytes << "," << err
                << "\n";
            std::cout << std::left << std::setw(7) << he.poly_degree << std::setw(15)
                      << chain_label(he) << std::setw(7) << scale_bits(he) << std::setw(6)
                      << (be ? "yes" : "no") << std::setw(14) << best_ms << std::setw(12)
                      << ct_bytes << std::scientific << std::setprecision(2) << err
                      << std::defaultfloat << "\n";
        }
    }
    for (const auto& [poly, pair] : be_bytes)
        if (pair.second)
            std::cout << "poly " << poly << ": batch encryption shrinks ciphertext traffic "
                      << std::setprecision(3) << double(pair.second) / double(pair.first)
                      << "x\n";
    std::cout << "wrote " << rc.outdir << "/bench_he.csv\n";
    return kExitOk;
}

// ==== attack ====

std::string self_binary() {
    char buf[4096];
    ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) throw IoError("cannot resolve own binary path");
    buf[n] = 0;
    return buf;
}

void emit_session_config(const RunConfig& rc, const std::string& path) {
    std::ofstream out(path);
    const split::TrainConfig& t = rc.train;
    out << "eta = " << t.eta << "\nbatch = " << t.batch << "\nbatches = " << t.batches
        << "\nepochs = " << t.epochs << "\nvariant = " << variant_name(t.variant)
        << "\nmode = " << split::mode_name(t.mode) << "\nseed = " << t.seed
        << "\nbatch_encrypt = " << (t.batch_encrypt ? "true" : "false")
        << "\nsynth_train = " << rc.synth_train << "\nsynth_test = " << rc.synth_test
        << "\nkey_seed = " << rc.key_seed << "\n";
    if (t.mode == Mode::SplitHE) {
        out << "poly = " << t.he.poly_degree << "\nchain = ";
        for (size_t i = 0; i < t.he.chain_bits.size(); ++i)
            out << (i ? "," : "") << t.he.chain_bits[i];
        out << "\nscale_bits = " << scale_bits(t.he) << "\n";
        if (rc.allow_weak) out << "allow_weak_params = true\n";
    }
}

int cmd_attack(const std::vector<std::string>& args) {
    RunConfig rc;
    rc.synth_train = 16;
    rc.synth_test = 8;
    rc.train.epochs = 1;
    rc = parse_run(args, rc);
    if (rc.train.mode == Mode::Local) rc.train.mode = Mode::SplitPlain;
    require_strong_or_waived(rc);
    std::filesystem::create_directories(rc.outdir);

    std::vector<attack::ProxyAction> scripted;
    if (!rc.script_path.empty()) {
        std::ifstream in(rc.script_path);
        if (!in) throw Error("cannot open script: " + rc.script_path);
        scripted = attack::parse_adversary_script(in);
    }
    if (scripted.empty() && rc.fuzz_tampers == 0 && rc.fuzz_replays == 0) {
        rc.fuzz_tampers = 20;
        rc.fuzz_replays = 5;
    }

    std::string bin = self_binary();
    std::string work = rc.outdir + "/attack_work";
    std::filesystem::create_directories(work + "/client");
    std::filesystem::create_directories(work + "/server");
    std::string cfg_path = work + "/session.conf";
    emit_session_config(rc, cfg_path);

    auto session_args = [&](uint16_t port) {
        std::vector<std::string> server_args = {bin,      "server",   "--config",
                                                cfg_path, "--outdir", work + "/server",
                                                "--listen", "127.0.0.1:" + std::to_string(port)};
        std::vector<std::string> client_args = {bin,      "client",   "--config",
                                                cfg_path, "--outdir", work + "/client"};
        return std::pair(server_args, client_args);
    };

    // Honest control first; it also calibrates how many frames a session has.
    std::cout << "honest control session..." << std::flush;
    uint16_t port = attack::pick_free_port();
    auto [sargs, cargs] = session_args(port);
    attack::SessionOutcome honest =
        attack::run_proxied_session(sargs, cargs, port, {}, rc.session_timeout_ms);
    if (!honest.completed()) {
        std::cout << "\n";
        std::cerr << "honest control failed (client exit " << honest.client_exit
                  << ", server exit " << honest.server_exit << ")\n";
        return kExitDetectFail;
    }
    size_t window = honest.frames_seen;
    std::cout << " ok, " << window << " frames observed\n";
    if (window < 8) throw Error("session too short to attack; raise synth_train or epochs");

    std::vector<attack::ProxyAction> plan = scripted;
    Rng fuzz(rc.fuzz_seed);
    auto rand_index = [&] { return size_t(fuzz.uniform_int(0, int64_t(window) - 4)); };
    for (size_t i = 0; i < rc.fuzz_tampers; ++i) {
        attack::ProxyAction a;
        a.kind = attack::ProxyAction::Kind::Tamper;
        a.index = rand_index();
        a.offset = size_t(fuzz.uniform_int(0, 1 << 16));
        plan.push_back(a);
    }
    for (size_t i = 0; i < rc.fuzz_replays; ++i) {
        attack::ProxyAction a;
        a.kind = attack::ProxyAction::Kind::Replay;
        a.index = rand_index();
        plan.push_back(a);
    }

    std::ofstream report(rc.outdir + "/attack_report.csv");
    report << "action,expectation,result,fault\n";
    size_t missed = 0, done = 0;
    for (const attack::ProxyAction& a : plan) {
        port = attack::pick_free_port();
        auto [sa, ca] = session_args(port);
        attack::SessionOutcome out =
            attack::run_proxied_session(sa, ca, port, {a}, rc.session_timeout_ms);
        const bool benign = a.kind == attack::ProxyAction::Kind::Delay;
        bool ok = benign ? out.completed() : out.detected();
        if (!ok) ++missed;
        report << a.describe() << "," << (benign ? "completes" : "detected") << ","
               << (ok ? "ok" : "MISSED") << "," << (benign ? "" : out.fault()) << "\n";
        ++done;
        if (done % 25 == 0 || done == plan.size())
            std::cout << "  " << done << "/" << plan.size() << " sessions, " << missed
                      << " missed\n"
                      << std::flush;
    }

    std::cout << "attack report: " << plan.size() << " scripted sessions, " << missed
              << " undetected; honest control completed\n"
              << "wrote " << rc.outdir << "/attack_report.csv\n";
    return missed == 0 ? kExitOk : kExitDetectFail;
}

// ==== entry ====

void usage() {
    std::cout <<
        "usage: hesplit <command> [--config FILE] [--flag value]...\n"
        "\n"
        "commands:\n"
        "  local      train the whole model in one process\n"
        "  client     data-holding side of a split session (connects out)\n"
        "  server     label-free middle layer of a split session (listens)\n"
        "  attack     run scripted/fuzzed wire manipulations through a proxy\n"
        "  dump-am    write activation-map channels next to their input series\n"
        "  bench-he   time the encrypted linear layer across parameter sets\n"
        "\n"
        "training flags (also valid as `key = value` lines in --config):\n"
        "  --eta F --batch N --batches N --epochs N --variant M1|M2|M3\n"
        "  --mode local|split-plain|split-he --seed N --batch-encrypt BOOL\n"
        "  --poly N --chain B1,B2,... --scale-bits N\n"
        "\n"
        "run flags:\n"
        "  --listen HOST:PORT --connect HOST:PORT --outdir DIR --report csv|csv+svg\n"
        "  --key-seed N --synth-train N --synth-test N --train-data F --test-data F\n"
        "  --allow-weak-params   (waive the 4096 ring-dimension floor)\n"
        "\n"
        "attack flags: --script FILE | --fuzz-tampers N --fuzz-replays N --fuzz-seed N\n"
        "dump-am flags: --model FILE --samples 0,3,7\n"
        "bench-he flags: --rows N --dim N --reps N\n"
        "\n"
        "HESPLIT_LISTEN / HESPLIT_CONNECT override addresses from the config file.\n"
        "exit codes: 0 ok, 2 bad config, 3 protocol abort, 4 manipulation missed\n";
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty()) {
        usage();
        return kExitConfig;
    }
    std::string cmd = args.front();
    args.erase(args.begin());
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        usage();
        return kExitOk;
    }
    try {
        if (cmd == "local") return cmd_local(args);
        if (cmd == "client") return cmd_client(args);
        if (cmd == "server") return cmd_server(args);
        if (cmd == "attack") return cmd_attack(args);
        if (cmd == "dump-am") return cmd_dump_am(args);
        if (cmd == "bench-he") return cmd_bench_he(args);
        std::cerr << "unknown command: " << cmd << "\n";
        usage();
        return kExitConfig;
    } catch (const ProtocolError& e) {
        std::cerr << "abort: " << fault_name(e.fault()) << "\n" << e.what() << "\n";
        return kExitAbort;
    } catch (const IoError& e) {
        std::cerr << "io failure: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
}
