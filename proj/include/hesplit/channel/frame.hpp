// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hesplit/channel/crypto.hpp"

namespace hesplit::channel {

/**
 * Protocol message types.  The four M values are the formal handshake round;
 * the Train and Eval values carry per-batch traffic, with He variants for
 * payloads that are already homomorphically encrypted and therefore travel
 * signed but not sealed.
 */
enum class MsgType : uint8_t {
    Sync = 1,
    M1Setup = 2,
    M2Eval = 3,
    M3Grad = 4,
    M4GradPrime = 5,
    TrainAm = 6,
    TrainOut = 7,
    TrainGradOut = 8,
    TrainGradAm = 9,
    TrainAmHe = 10,
    TrainOutHe = 11,
    EvalAm = 12,
    EvalOut = 13,
    EvalAmHe = 14,
    EvalOutHe = 15,
    Done = 16,
};

inline bool valid_msg_type(uint8_t v) { return v >= 1 && v <= 16; }

inline const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::Sync: return "SYNC";
        case MsgType::M1Setup: return "M1_SETUP";
        case MsgType::M2Eval: return "M2_EVAL";
        case MsgType::M3Grad: return "M3_GRAD";
        case MsgType::M4GradPrime: return "M4_GRADPRIME";
        case MsgType::TrainAm: return "TRAIN_AM";
        case MsgType::TrainOut: return "TRAIN_OUT";
        case MsgType::TrainGradOut: return "TRAIN_GRAD_OUT";
        case MsgType::TrainGradAm: return "TRAIN_GRAD_AM";
        case MsgType::TrainAmHe: return "TRAIN_AM_HE";
        case MsgType::TrainOutHe: return "TRAIN_OUT_HE";
        case MsgType::EvalAm: return "EVAL_AM";
        case MsgType::EvalOut: return "EVAL_OUT";
        case MsgType::EvalAmHe: return "EVAL_AM_HE";
        case MsgType::EvalOutHe: return "EVAL_OUT_HE";
        case MsgType::Done: return "DONE";
    }
    return "?";
}

/**
 * True for payloads that are ciphertext already (HE material or the key blob
 * composed inside M1): the channel signs these but must not seal them again.
 */
inline bool is_passthrough(MsgType t) {
    switch (t) {
        case MsgType::Sync:
        case MsgType::M1Setup:
        case MsgType::M2Eval:
        case MsgType::TrainAmHe:
        case MsgType::TrainOutHe:
        case MsgType::EvalAmHe:
        case MsgType::EvalOutHe:
        case MsgType::Done: return true;
        default: return false;
    }
}

/** Frame layout: len:u32 | type:u8 | t:u64 | seq:u64 | payload | sig. */
inline constexpr size_t kFrameOverhead = 4 + 1 + 8 + 8 + kSigBytes;
inline constexpr size_t kMaxPayload = 1'500'000'000;
inline constexpr uint64_t kFreshnessWindowMs = 60'000;
inline constexpr size_t kSessionIdBytes = 16;

struct WireMessage {
    MsgType type = MsgType::Done;
    uint64_t t = 0;    // unix milliseconds at sealing time
    uint64_t seq = 0;  // strictly increasing per sender per session
    Bytes payload;     // sealed or passthrough bytes, per is_passthrough
    Bytes sig;         // detached signature over the session digest
};

/**
 * The signed digest: H(session_id | type | t | seq | payload).  The session
 * id is all zeros for Sync, which runs before the id exists; afterwards it
 * binds every signature to this session so captured frames cannot be replayed
 * into another one.
 */
inline std::array<uint8_t, kHashBytes> signed_digest(
    const std::array<uint8_t, kSessionIdBytes>& sid, MsgType type, uint64_t t, uint64_t seq,
    const Bytes& payload) {
    ByteWriter w;
    w.bytes(sid.data(), sid.size());
    w.u8(uint8_t(type));
    w.u64(t);
    w.u64(seq);
    w.bytes(payload);
    Bytes buf = w.take();
    return sha256(buf.data(), buf.size());
}

inline Bytes encode_frame(const WireMessage& m) {
    if (m.payload.size() > kMaxPayload)
        throw ProtocolError(Fault::MalformedFrame, "payload exceeds the frame limit");
    if (m.sig.size() != kSigBytes)
        throw ProtocolError(Fault::MalformedFrame, "signature has the wrong length");
    ByteWriter w;
    w.u32(uint32_t(1 + 8 + 8 + m.payload.size() + kSigBytes));
    w.u8(uint8_t(m.type));
    w.u64(m.t);
    w.u64(m.seq);
    w.bytes(m.payload);
    w.bytes(m.sig);
    return w.take();
}

inline WireMessage decode_frame(const Bytes& frame) {
    if (frame.size() < kFrameOverhead)
        throw ProtocolError(Fault::MalformedFrame, "frame shorter than its fixed fields");
    ByteReader r(frame);
    WireMessage m;
    try {
        uint32_t len = r.u32();
        if (len != frame.size() - 4)
            throw ProtocolError(Fault::MalformedFrame, "frame length disagrees with payload");
        uint8_t type = r.u8();
        if (!valid_msg_type(type))
            throw ProtocolError(Fault::MalformedFrame, "unknown message type");
        m.type = MsgType(type);
        m.t = r.u64();
        m.seq = r.u64();
        m.payload = r.bytes(frame.size() - kFrameOverhead);
        m.sig = r.bytes(kSigBytes);
    } catch (const SerializationError& e) {
        throw ProtocolError(Fault::MalformedFrame, e.what());
    }
    return m;
}

}  // namespace hesplit::channel
