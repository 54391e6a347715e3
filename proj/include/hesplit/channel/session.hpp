// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "hesplit/channel/net.hpp"

namespace hesplit::channel {

struct CommMeter {
    uint64_t sent = 0, received = 0;
};

/**
 * One authenticated, replay-protected conversation over a byte channel.
 *
 * Every outbound message is timestamped, sequence-numbered, signed over
 * H(session_id | type | t | seq | payload), and sealed to the peer unless its
 * type carries ciphertext already.  Every inbound message must pass, in
 * order: signature, freshness (|now - t| within the window), and a strictly
 * increasing sequence; any failure raises ProtocolError with the fault class
 * the participant reports before aborting.
 *
 * The session id is derived from both parties' Sync nonces, so a frame
 * captured in one session fails signature verification in every other.
 */
class Session {
public:
    enum class Role : uint8_t { Client = 1, Server = 2 };

    Session(Role role, ByteChannel& ch, KeyRing ring,
            std::function<uint64_t()> clock = now_ms)
        : role_(role), ch_(ch), ring_(std::move(ring)), clock_(std::move(clock)) {}

    [[nodiscard]] Role role() const { return role_; }
    [[nodiscard]] const CommMeter& meter() const { return meter_; }
    [[nodiscard]] const std::array<uint8_t, kSessionIdBytes>& session_id() const {
        return sid_;
    }
    [[nodiscard]] bool synced() const {
        for (uint8_t b : sid_)
            if (b) return true;
        return false;
    }

    /** Proposes a configuration blob; aborts unless the peer echoes it. */
    void sync_client(const Bytes& proposal) {
        ensure_sodium();
        std::array<uint8_t, kSessionIdBytes> nc;
        randombytes_buf(nc.data(), nc.size());
        ByteWriter w;
        w.bytes(nc.data(), nc.size());
        w.bytes(proposal);
        send(MsgType::Sync, w.take());
        Bytes reply = recv(MsgType::Sync);
        if (reply.size() < kSessionIdBytes)
            throw ProtocolError(Fault::MalformedFrame, "sync reply too short");
        Bytes echoed(reply.begin() + kSessionIdBytes, reply.end());
        if (echoed != proposal)
            throw ProtocolError(Fault::ConfigMismatch,
                                "peer changed the proposed configuration");
        derive_sid(nc.data(), reply.data());
    }

    /** Accepts or rejects the client's proposal; echoes it on acceptance. */
    Bytes sync_server(const std::function<bool(const Bytes&)>& accept) {
        ensure_sodium();
        Bytes req = recv(MsgType::Sync);
        if (req.size() < kSessionIdBytes)
            throw ProtocolError(Fault::MalformedFrame, "sync request too short");
        Bytes proposal(req.begin() + kSessionIdBytes, req.end());
        if (!accept(proposal))
            throw ProtocolError(Fault::ConfigMismatch, "unacceptable configuration proposed");
        std::array<uint8_t, kSessionIdBytes> ns;
        randombytes_buf(ns.data(), ns.size());
        ByteWriter w;
        w.bytes(ns.data(), ns.size());
        w.bytes(proposal);
        send(MsgType::Sync, w.take());
        derive_sid(req.data(), ns.data());
        return proposal;
    }

    void send(MsgType type, const Bytes& payload) {
        WireMessage m;
        m.type = type;
        m.t = clock_();
        m.seq = ++send_seq_;
        m.payload = is_passthrough(type) ? payload : seal_to(ring_.peer_box_pk, payload);
        auto digest = signed_digest(sid_, m.type, m.t, m.seq, m.payload);
        m.sig = sign_detached(ring_, digest.data(), digest.size());
        Bytes frame = encode_frame(m);
        ch_.send_frame(frame);
        meter_.sent += frame.size();
    }

    std::pair<MsgType, Bytes> recv_any() {
        Bytes frame = ch_.recv_frame();
        meter_.received += frame.size();
        WireMessage m = decode_frame(frame);
        auto digest = signed_digest(sid_, m.type, m.t, m.seq, m.payload);
        if (!verify_detached(ring_.peer_ver, digest.data(), digest.size(), m.sig.data(),
                             m.sig.size()))
            throw ProtocolError(Fault::BadSignature, "signature does not verify");
        uint64_t now = clock_();
        uint64_t skew = now > m.t ? now - m.t : m.t - now;
        if (skew > kFreshnessWindowMs)
            throw ProtocolError(Fault::StaleTimestamp, "timestamp outside the freshness window");
        if (m.seq <= last_accepted_)
            throw ProtocolError(Fault::ReplayedSequence, "sequence number does not advance");
        last_accepted_ = m.seq;
        if (is_passthrough(m.type)) return {m.type, std::move(m.payload)};
        return {m.type, open_sealed(ring_, m.payload)};
    }

    Bytes recv(MsgType expected) {
        auto [type, payload] = recv_any();
        if (type != expected)
            throw ProtocolError(Fault::UnexpectedMessage,
                                std::string("expected ") + msg_type_name(expected) +
                                    ", got " + msg_type_name(type));
        return payload;
    }

    /** Seals one segment of a composite payload (the M1 key blob). */
    [[nodiscard]] Bytes seal_segment(const Bytes& b) const {
        return seal_to(ring_.peer_box_pk, b);
    }
    [[nodiscard]] Bytes open_segment(const Bytes& b) const { return open_sealed(ring_, b); }

private:
    void derive_sid(const uint8_t* nc, const uint8_t* ns) {
        std::array<uint8_t, 2 * kSessionIdBytes> buf;
        std::copy_n(nc, kSessionIdBytes, buf.begin());
        std::copy_n(ns, kSessionIdBytes, buf.begin() + kSessionIdBytes);
        auto h = sha256(buf.data(), buf.size());
        std::copy_n(h.begin(), kSessionIdBytes, sid_.begin());
    }

    Role role_;
    ByteChannel& ch_;
    KeyRing ring_;
    std::function<uint64_t()> clock_;
    std::array<uint8_t, kSessionIdBytes> sid_{};
    uint64_t send_seq_ = 0;
    uint64_t last_accepted_ = 0;
    CommMeter meter_;
};

}  // namespace hesplit::channel
