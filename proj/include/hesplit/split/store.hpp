// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/data.hpp"
#include "hesplit/split/engine.hpp"

namespace hesplit::split {

inline constexpr uint32_t kModelMagic = 0x444D5348;  // "HSMD"

/**
 * Trained-model file.  A split run ends with the layers divided between the
 * two parties, so either half may be absent; flags bit 0 marks the client
 * stack, bit 1 the server linear layer.
 */
inline void save_model(const std::string& path, Variant variant, const ClientParams* client,
                       const ServerParams* server) {
    ByteWriter w;
    w.u32(kModelMagic);
    w.u8(1);
    w.u8(uint8_t(variant));
    w.u8(uint8_t((client ? 1 : 0) | (server ? 2 : 0)));
    if (client) {
        write_tensor_record(w, client->w1);
        write_tensor_record(w, client->b1);
        write_tensor_record(w, client->w2);
        write_tensor_record(w, client->b2);
    }
    if (server) {
        write_tensor_record(w, server->w);
        write_tensor_record(w, server->b);
    }
    Bytes b = w.take();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model file: " + path);
    out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
    if (!out) throw IoError("short write to model file: " + path);
}

struct StoredModel {
    Variant variant = Variant::M1;
    bool has_client = false, has_server = false;
    ModelParams params;
};

inline StoredModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(b);
    if (r.u32() != kModelMagic) throw SerializationError("bad model file magic");
    if (r.u8() != 1) throw SerializationError("unknown model file version");
    StoredModel m;
    uint8_t v = r.u8();
    if (v < 1 || v > 3) throw SerializationError("model file names an unknown variant");
    m.variant = Variant(v);
    uint8_t flags = r.u8();
    m.has_client = flags & 1;
    m.has_server = flags & 2;
    if (m.has_client) {
        m.params.client.w1 = read_tensor_record(r);
        m.params.client.b1 = read_tensor_record(r);
        m.params.client.w2 = read_tensor_record(r);
        m.params.client.b2 = read_tensor_record(r);
    }
    if (m.has_server) {
        m.params.server.w = read_tensor_record(r);
        m.params.server.b = read_tensor_record(r);
    }
    if (!r.done()) throw SerializationError("trailing model file bytes");
    return m;
}

inline void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics file: " + path);
    out << metrics_csv_header() << "\n";
    for (const auto& m : rows) out << metrics_csv_row(m) << "\n";
}

inline void save_server_csv(const std::string& path, const std::vector<ServerEpoch>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics file: " + path);
    out << server_csv_header() << "\n";
    for (const auto& e : rows) out << server_csv_row(e) << "\n";
}

}  // namespace hesplit::split
