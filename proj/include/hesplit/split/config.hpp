// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>

#include "hesplit/ckks/ckks.hpp"
#include "hesplit/model.hpp"

namespace hesplit::split {

enum class Mode : uint8_t { Local = 1, SplitPlain = 2, SplitHE = 3 };

inline const char* mode_name(Mode m) {
    switch (m) {
    case Mode::Local: return "local";
    case Mode::SplitPlain: return "split-plain";
    case Mode::SplitHE: return "split-he";
    }
    return "?";
}

inline Mode mode_from(const std::string& s) {
    if (s == "local") return Mode::Local;
    if (s == "split-plain") return Mode::SplitPlain;
    if (s == "split-he") return Mode::SplitHE;
    throw Error("unknown mode: " + s);
}

/**
 * Everything both peers must agree on before training.  The client proposes
 * the whole record in its sync message; a server with its own copy accepts
 * only an exact match.  The shared seed drives parameter init and the epoch
 * shuffle so local and split runs walk identical trajectories.
 */
struct TrainConfig {
    double eta = 1e-3;               // learning rate, client Adam and server GD
    size_t batch = 4;                // samples per step
    size_t batches = 0;              // steps per epoch; 0 = as many as the data allows
    size_t epochs = 1;
    Variant variant = Variant::M1;
    Mode mode = Mode::Local;
    ckks::HeParams he;               // consulted only in split-he mode
    bool batch_encrypt = true;       // column batching for HE payloads
    uint64_t seed = 1;

    void validate() const {
        if (!(eta > 0) && eta != 0.0) throw ParameterError("learning rate must be finite and >= 0");
        if (batch < 1) throw ParameterError("batch size must be at least 1");
        if (epochs < 1) throw ParameterError("epoch count must be at least 1");
        if (mode == Mode::SplitHE) he.validate();
    }
};

inline Bytes serialize(const TrainConfig& c) {
    ByteWriter w;
    w.u8(1);  // layout version
    w.f64(c.eta);
    w.u32(uint32_t(c.batch));
    w.u32(uint32_t(c.batches));
    w.u32(uint32_t(c.epochs));
    w.u8(uint8_t(c.variant));
    w.u8(uint8_t(c.mode));
    w.u8(c.batch_encrypt ? 1 : 0);
    w.u64(c.seed);
    w.u32(uint32_t(c.he.poly_degree));
    w.u8(uint8_t(c.he.chain_bits.size()));
    for (int b : c.he.chain_bits) w.u8(uint8_t(b));
    w.f64(c.he.scale);
    return w.take();
}

inline TrainConfig deserialize_config(const Bytes& bytes) {
    ByteReader r(bytes);
    if (r.u8() != 1) throw SerializationError("unknown config layout version");
    TrainConfig c;
    c.eta = r.f64();
    c.batch = r.u32();
    c.batches = r.u32();
    c.epochs = r.u32();
    c.variant = Variant(r.u8());
    c.mode = Mode(r.u8());
    c.batch_encrypt = r.u8() != 0;
    c.seed = r.u64();
    c.he.poly_degree = r.u32();
    size_t nbits = r.u8();
    c.he.chain_bits.clear();
    for (size_t i = 0; i < nbits; ++i) c.he.chain_bits.push_back(int(r.u8()));
    c.he.scale = r.f64();
    if (!r.done()) throw SerializationError("trailing config bytes");
    if (uint8_t(c.variant) < 1 || uint8_t(c.variant) > 3)
        throw SerializationError("config carries an unknown variant");
    if (uint8_t(c.mode) < 1 || uint8_t(c.mode) > 3)
        throw SerializationError("config carries an unknown mode");
    c.validate();
    return c;
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return serialize(a) == serialize(b);
}

// ==== Key-value config files ====
//
// One `key = value` pair per line; '#' starts a comment.  The chain is a
// comma list, e.g. `chain = 60,40,40,60`.

inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
    auto as_u64 = [&]() -> uint64_t {
        size_t pos = 0;
        uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw Error("bad number for " + key + ": " + value);
        return v;
    };
    if (key == "eta") {
        c.eta = std::stod(value);
    } else if (key == "batch") {
        c.batch = as_u64();
    } else if (key == "batches") {
        c.batches = as_u64();
    } else if (key == "epochs") {
        c.epochs = as_u64();
    } else if (key == "variant") {
        c.variant = variant_from(value);
    } else if (key == "mode") {
        c.mode = mode_from(value);
    } else if (key == "poly") {
        c.he.poly_degree = as_u64();
    } else if (key == "chain") {
        c.he.chain_bits.clear();
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ','))
            c.he.chain_bits.push_back(std::stoi(part));
    } else if (key == "scale_bits") {
        c.he.scale = std::ldexp(1.0, int(as_u64()));
    } else if (key == "batch_encrypt") {
        if (value == "true" || value == "1") c.batch_encrypt = true;
        else if (value == "false" || value == "0") c.batch_encrypt = false;
        else throw Error("batch_encrypt must be true or false");
    } else if (key == "seed") {
        c.seed = as_u64();
    } else {
        throw Error("unknown config key: " + key);
    }
}

inline std::string trimmed(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    TrainConfig c;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = line.substr(0, line.find('#'));
        s = trimmed(s);
        if (s.empty()) continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(c, trimmed(s.substr(0, eq)), trimmed(s.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

inline std::string describe(const TrainConfig& c) {
    std::ostringstream os;
    os << mode_name(c.mode) << " " << variant_name(c.variant) << " eta=" << c.eta
       << " batch=" << c.batch << " batches=" << (c.batches ? std::to_string(c.batches) : "all")
       << " epochs=" << c.epochs << " seed=" << c.seed;
    if (c.mode == Mode::SplitHE)
        os << " he=" << ckks::param_label(c.he) << " be=" << (c.batch_encrypt ? "on" : "off");
    return os.str();
}

}  // namespace hesplit::split
