// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "hesplit/channel/net.hpp"

namespace hesplit::attack {

/**
 * One wire manipulation, keyed to the n-th frame the proxy observes across
 * both directions (counting from zero; a sync handshake occupies indices 0
 * and 1).  Kinds:
 *   tamper  - XOR one byte of frame `index` at `offset` (taken past the
 *             length prefix, which carries no authenticity claim; corrupting
 *             it only stalls the pipe rather than testing the verifier)
 *   replay  - forward frame `index`, then forward a byte-identical copy
 *   delay   - hold frame `index` for `ms` before forwarding
 *   reorder - deliver a stale copy of earlier frame `index2` ahead of frame
 *             `index`; in a lock-step protocol this is the realizable form
 *             of out-of-order delivery
 */
struct ProxyAction {
    enum class Kind : uint8_t { Tamper = 1, Replay = 2, Delay = 3, Reorder = 4 };
    Kind kind = Kind::Tamper;
    size_t index = 0;
    size_t offset = 0;  // tamper only
    uint64_t ms = 0;    // delay only
    size_t index2 = 0;  // reorder only; must be < index

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        switch (kind) {
        case Kind::Tamper: os << "tamper " << index << " " << offset; break;
        case Kind::Replay: os << "replay " << index; break;
        case Kind::Delay: os << "delay " << index << " " << ms; break;
        case Kind::Reorder: os << "reorder " << index << " " << index2; break;
        }
        return os.str();
    }
};

/** One action per line, e.g. "tamper 7 133" or "reorder 9 5"; '#' comments. */
inline std::vector<ProxyAction> parse_adversary_script(std::istream& in) {
    std::vector<ProxyAction> actions;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = line.substr(0, line.find('#'));
        std::istringstream ls(s);
        std::string word;
        if (!(ls >> word)) continue;
        ProxyAction a;
        auto need = [&](size_t& field) {
            if (!(ls >> field))
                throw Error("script line " + std::to_string(lineno) + ": missing argument");
        };
        if (word == "tamper") {
            a.kind = ProxyAction::Kind::Tamper;
            need(a.index);
            need(a.offset);
        } else if (word == "replay") {
            a.kind = ProxyAction::Kind::Replay;
            need(a.index);
        } else if (word == "delay") {
            a.kind = ProxyAction::Kind::Delay;
            need(a.index);
            size_t ms;
            need(ms);
            a.ms = ms;
        } else if (word == "reorder") {
            a.kind = ProxyAction::Kind::Reorder;
            need(a.index);
            need(a.index2);
            if (a.index2 >= a.index)
                throw Error("script line " + std::to_string(lineno) +
                            ": reorder needs an earlier source frame");
        } else {
            throw Error("script line " + std::to_string(lineno) + ": unknown action " + word);
        }
        std::string extra;
        if (ls >> extra)
            throw Error("script line " + std::to_string(lineno) + ": trailing text");
        actions.push_back(a);
    }
    return actions;
}

inline uint16_t pick_free_port() {
    channel::TcpListener probe(0);
    return probe.port();
}

/**
 * Frame-aware man-in-the-middle: accepts one client on the front port,
 * connects onward to the back port, and pumps framed messages in both
 * directions, applying scripted actions by observed frame index.  Frames are
 * forwarded byte-identically unless an action says otherwise, so an empty
 * script is a transparent wire.
 */
class FrameProxy {
public:
    FrameProxy(uint16_t front_port, uint16_t back_port, std::vector<ProxyAction> script)
        : listener_(front_port), back_port_(back_port) {
        for (auto& a : script) actions_[a.index].push_back(a);
    }

    [[nodiscard]] uint16_t front_port() const { return listener_.port(); }

    /** Total frames observed across both directions (valid after serve_one). */
    [[nodiscard]] size_t frames_seen() {
        std::lock_guard<std::mutex> lock(mu_);
        return next_index_;
    }

    /** Blocks until one full session has passed through (both sides closed). */
    void serve_one() {
        channel::TcpChannel client = listener_.accept();
        channel::TcpChannel server = connect_back();
        std::thread up([&] { pump(client, server); });
        pump(server, client);
        up.join();
    }

private:
    channel::TcpChannel connect_back() {
        for (int attempt = 0;; ++attempt) {
            try {
                return channel::connect_tcp("127.0.0.1", back_port_);
            } catch (const IoError&) {
                if (attempt >= 50) throw;
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
        }
    }

    void pump(channel::TcpChannel& from, channel::TcpChannel& to) {
        try {
            for (;;) {
                Bytes frame = from.recv_frame();
                size_t idx;
                std::vector<ProxyAction> todo;
                {
                    std::lock_guard<std::mutex> lock(mu_);
                    idx = next_index_++;
                    seen_[idx] = frame;
                    auto it = actions_.find(idx);
                    if (it != actions_.end()) todo = it->second;
                }
                for (const ProxyAction& a : todo) apply(a, frame, to);
                to.send_frame(frame);
                if (is_replayed_.count(idx)) to.send_frame(frame);
            }
        } catch (const std::exception&) {
            // One side is gone; unblock the opposite pump so the session
            // tears down instead of waiting on a silent socket.
            from.shutdown();
            to.shutdown();
        }
    }

    void apply(const ProxyAction& a, Bytes& frame, channel::TcpChannel& to) {
        switch (a.kind) {
        case ProxyAction::Kind::Tamper: {
            size_t span = frame.size() > 4 ? frame.size() - 4 : 1;
            frame[4 + (a.offset % span)] ^= 0x01;
            break;
        }
        case ProxyAction::Kind::Replay:
            is_replayed_.insert(a.index);
            break;
        case ProxyAction::Kind::Delay:
            std::this_thread::sleep_for(std::chrono::milliseconds(a.ms));
            break;
        case ProxyAction::Kind::Reorder: {
            Bytes stale;
            {
                std::lock_guard<std::mutex> lock(mu_);
                auto it = seen_.find(a.index2);
                if (it == seen_.end()) return;
                stale = it->second;
            }
            to.send_frame(stale);
            break;
        }
        }
    }

    channel::TcpListener listener_;
    uint16_t back_port_;
    std::mutex mu_;
    size_t next_index_ = 0;
    std::map<size_t, Bytes> seen_;
    std::map<size_t, std::vector<ProxyAction>> actions_;
    std::set<size_t> is_replayed_;
};

// ==== Subprocess victims ====

struct ProcessResult {
    int exit_code = -1;
    bool timed_out = false;
    std::string stderr_text;
};

/** Spawns argv with stderr captured to a temp file; argv[0] is the binary. */
class Subprocess {
public:
    explicit Subprocess(const std::vector<std::string>& argv) {
        char tmpl[] = "/tmp/hesplit_errXXXXXX";
        err_fd_ = mkstemp(tmpl);
        if (err_fd_ < 0) throw IoError("cannot create capture file");
        err_path_ = tmpl;
        std::vector<char*> args;
        for (const auto& s : argv) args.push_back(const_cast<char*>(s.c_str()));
        args.push_back(nullptr);
        pid_ = fork();
        if (pid_ < 0) throw IoError("fork failed");
        if (pid_ == 0) {
            int devnull = open("/dev/null", O_WRONLY);
            if (devnull >= 0) dup2(devnull, 1);
            dup2(err_fd_, 2);
            execv(args[0], args.data());
            _exit(127);
        }
    }

    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    ~Subprocess() {
        if (pid_ > 0) {
            kill(pid_, SIGKILL);
            waitpid(pid_, nullptr, 0);
        }
        if (err_fd_ >= 0) close(err_fd_);
        if (!err_path_.empty()) unlink(err_path_.c_str());
    }

    /** Waits up to the deadline, then kills; returns code and captured stderr. */
    ProcessResult wait(uint64_t timeout_ms) {
        ProcessResult r;
        uint64_t waited = 0;
        int status = 0;
        for (;;) {
            pid_t got = waitpid(pid_, &status, WNOHANG);
            if (got == pid_) break;
            if (waited >= timeout_ms) {
                kill(pid_, SIGKILL);
                waitpid(pid_, &status, 0);
                r.timed_out = true;
                break;
            }
            usleep(10'000);
            waited += 10;
        }
        pid_ = -1;
        if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
        std::ifstream in(err_path_);
        std::stringstream ss;
        ss << in.rdbuf();
        r.stderr_text = ss.str();
        return r;
    }

private:
    pid_t pid_ = -1;
    int err_fd_ = -1;
    std::string err_path_;
};

/** First "abort: <FaultClass>" line in a victim's stderr, or empty. */
inline std::string parse_abort_fault(const std::string& text) {
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        auto pos = line.find("abort: ");
        if (pos != std::string::npos) return line.substr(pos + 7);
    }
    return "";
}

struct SessionOutcome {
    int client_exit = -1;
    int server_exit = -1;
    bool timed_out = false;
    std::string client_fault;  // fault class from "abort: <class>", if any
    std::string server_fault;
    size_t frames_seen = 0;    // total frames the proxy observed

    /** Some party rejected the session with a protocol fault (exit code 3). */
    [[nodiscard]] bool detected() const {
        return (server_exit == 3 && !server_fault.empty()) ||
               (client_exit == 3 && !client_fault.empty());
    }

    /** The fault class of the aborting victim; the peer usually just loses
     *  its socket, so a real protocol fault outranks a transport failure. */
    [[nodiscard]] std::string fault() const {
        if (server_exit == 3 && !server_fault.empty()) return server_fault + " at server";
        if (client_exit == 3 && !client_fault.empty()) return client_fault + " at client";
        return "";
    }

    [[nodiscard]] bool completed() const {
        return client_exit == 0 && server_exit == 0 && !timed_out;
    }
};

/**
 * Runs one client/server session through the proxy with the given script and
 * reports how each side exited.  `server_args` and `client_args_base` are
 * full argv vectors; the client's connect endpoint is appended once the
 * proxy's front port is known.
 */
inline SessionOutcome run_proxied_session(const std::vector<std::string>& server_args,
                                          const std::vector<std::string>& client_args_base,
                                          uint16_t server_port,
                                          const std::vector<ProxyAction>& script,
                                          uint64_t timeout_ms = 60'000) {
    FrameProxy proxy(0, server_port, script);
    Subprocess server(server_args);
    std::thread pt([&] {
        try {
            proxy.serve_one();
        } catch (const std::exception&) {
        }
    });
    std::vector<std::string> client_args = client_args_base;
    client_args.push_back("--connect");
    client_args.push_back("127.0.0.1:" + std::to_string(proxy.front_port()));
    Subprocess client(client_args);

    ProcessResult cr = client.wait(timeout_ms);
    ProcessResult sr = server.wait(5'000);
    pt.join();

    SessionOutcome out;
    out.client_exit = cr.exit_code;
    out.server_exit = sr.exit_code;
    out.timed_out = cr.timed_out || sr.timed_out;
    out.client_fault = parse_abort_fault(cr.stderr_text);
    out.server_fault = parse_abort_fault(sr.stderr_text);
    out.frames_seen = proxy.frames_seen();
    return out;
}

}  // namespace hesplit::attack
