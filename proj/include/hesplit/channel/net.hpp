// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "hesplit/channel/frame.hpp"

namespace hesplit::channel {

/** One-frame-at-a-time duplex transport the session runs over. */
class ByteChannel {
public:
    virtual ~ByteChannel() = default;
    virtual void send_frame(const Bytes& frame) = 0;
    virtual Bytes recv_frame() = 0;
};

// ==== TCP ====

namespace detail {

inline void write_all(int fd, const uint8_t* p, size_t n) {
    while (n > 0) {
        ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w <= 0) throw IoError("socket write failed");
        p += w;
        n -= size_t(w);
    }
}

inline void read_exact(int fd, uint8_t* p, size_t n) {
    while (n > 0) {
        ssize_t r = ::recv(fd, p, n, 0);
        if (r == 0) throw IoError("peer closed the connection");
        if (r < 0) throw IoError("socket read failed");
        p += r;
        n -= size_t(r);
    }
}

}  // namespace detail

/**
 * Length-framed TCP stream: each frame travels as its on-wire encoding, the
 * leading u32 telling the reader how much follows.
 */
class TcpChannel : public ByteChannel {
public:
    TcpChannel() = default;
    explicit TcpChannel(int fd) : fd_(fd) {}
    TcpChannel(TcpChannel&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    TcpChannel& operator=(TcpChannel&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;
    ~TcpChannel() override { close(); }

    void send_frame(const Bytes& frame) override {
        detail::write_all(fd_, frame.data(), frame.size());
    }

    Bytes recv_frame() override {
        uint8_t head[4];
        detail::read_exact(fd_, head, 4);
        uint32_t len;
        std::memcpy(&len, head, 4);
        if (len < kFrameOverhead - 4 || len > kMaxPayload + kFrameOverhead)
            throw ProtocolError(Fault::MalformedFrame, "frame length out of range");
        Bytes frame(4 + size_t(len));
        std::memcpy(frame.data(), head, 4);
        detail::read_exact(fd_, frame.data() + 4, len);
        return frame;
    }

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    /** Unblocks any thread reading or writing this socket; fd stays owned. */
    void shutdown() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    [[nodiscard]] bool open() const { return fd_ >= 0; }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    /** Binds 127.0.0.1:port; port 0 picks an ephemeral one (see port()). */
    explicit TcpListener(uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError("socket creation failed");
        int opt = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            ::close(fd_);
            throw IoError("bind failed on port " + std::to_string(port));
        }
        if (::listen(fd_, 4) < 0) {
            ::close(fd_);
            throw IoError("listen failed");
        }
        socklen_t len = sizeof(addr);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    [[nodiscard]] uint16_t port() const { return port_; }

    TcpChannel accept() {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) throw IoError("accept failed");
        int opt = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &opt, sizeof(opt));
        return TcpChannel(fd);
    }

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

inline TcpChannel connect_tcp(const std::string& host, uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("socket creation failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw IoError("unusable host address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
        ::close(fd);
        throw IoError("connect failed to " + host + ":" + std::to_string(port));
    }
    int opt = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &opt, sizeof(opt));
    return TcpChannel(fd);
}

// ==== In-memory pair (tests and harness plumbing) ====

/** Thread-safe frame queue; a crossed pair of these forms a loopback link. */
class FrameQueue {
public:
    void push(Bytes frame) {
        {
            std::lock_guard lk(mu_);
            q_.push_back(std::move(frame));
        }
        cv_.notify_one();
    }

    Bytes pop() {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) throw IoError("peer closed the channel");
        Bytes f = std::move(q_.front());
        q_.pop_front();
        return f;
    }

    void close() {
        {
            std::lock_guard lk(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Bytes> q_;
    bool closed_ = false;
};

class PairChannel : public ByteChannel {
public:
    PairChannel(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}
    ~PairChannel() override { out_->close(); }

    void send_frame(const Bytes& frame) override { out_->push(frame); }
    Bytes recv_frame() override { return in_->pop(); }

private:
    std::shared_ptr<FrameQueue> out_, in_;
};

/** Two connected in-memory endpoints. */
inline std::pair<std::unique_ptr<PairChannel>, std::unique_ptr<PairChannel>> loopback_pair() {
    auto a = std::make_shared<FrameQueue>();
    auto b = std::make_shared<FrameQueue>();
    return {std::make_unique<PairChannel>(a, b), std::make_unique<PairChannel>(b, a)};
}

}  // namespace hesplit::channel
