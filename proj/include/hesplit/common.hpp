// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hesplit {

// ==== Errors ====

/** Root of every error thrown by the library. */
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/** Tensor/layer shape disagreement. */
class DimensionError : public Error {
public:
    using Error::Error;
};

/** Invalid or unsatisfiable cryptographic parameters. */
class ParameterError : public Error {
public:
    using Error::Error;
};

/** Payload does not fit the available ciphertext slots. */
class CapacityError : public Error {
public:
    using Error::Error;
};

/** Modulus chain exhausted: no level left for another multiplication. */
class DepthError : public Error {
public:
    using Error::Error;
};

/** Operands live at different levels or scales. */
class AlignmentError : public Error {
public:
    using Error::Error;
};

/** Operation requires key material the context does not hold. */
class CapabilityError : public Error {
public:
    using Error::Error;
};

/** Malformed byte stream while reading a serialized object. */
class SerializationError : public Error {
public:
    using Error::Error;
};

/** Filesystem or socket failure. */
class IoError : public Error {
public:
    using Error::Error;
};

/** Reasons a protocol participant rejects traffic and aborts. */
enum class Fault : uint8_t {
    BadSignature = 1,
    StaleTimestamp = 2,
    ReplayedSequence = 3,
    MalformedFrame = 4,
    UnexpectedMessage = 5,
    ConfigMismatch = 6,
};

inline const char* fault_name(Fault f) {
    switch (f) {
    case Fault::BadSignature: return "BadSignature";
    case Fault::StaleTimestamp: return "StaleTimestamp";
    case Fault::ReplayedSequence: return "ReplayedSequence";
    case Fault::MalformedFrame: return "MalformedFrame";
    case Fault::UnexpectedMessage: return "UnexpectedMessage";
    case Fault::ConfigMismatch: return "ConfigMismatch";
    }
    return "Unknown";
}

/** Channel-level rejection; carries the fault class the victim reports. */
class ProtocolError : public Error {
public:
    ProtocolError(Fault f, const std::string& msg)
        : Error(std::string(fault_name(f)) + ": " + msg), fault_(f) {}
    [[nodiscard]] Fault fault() const { return fault_; }

private:
    Fault fault_;
};

// ==== Little-endian byte IO ====

using Bytes = std::vector<uint8_t>;

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { append(&v, 2); }
    void u32(uint32_t v) { append(&v, 4); }
    void u64(uint64_t v) { append(&v, 8); }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const uint8_t* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void bytes(const Bytes& b) { bytes(b.data(), b.size()); }

    [[nodiscard]] const Bytes& data() const { return buf_; }
    Bytes take() { return std::move(buf_); }
    [[nodiscard]] size_t size() const { return buf_.size(); }

private:
    void append(const void* p, size_t n) {
        // Little-endian host assumed (asserted in tests); bytes go out verbatim.
        const auto* c = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    Bytes buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    explicit ByteReader(const Bytes& b) : p_(b.data()), n_(b.size()) {}

    uint8_t u8() { return *take(1); }
    uint16_t u16() { return load<uint16_t>(); }
    uint32_t u32() { return load<uint32_t>(); }
    uint64_t u64() { return load<uint64_t>(); }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    Bytes bytes(size_t n) {
        const uint8_t* p = take(n);
        return Bytes(p, p + n);
    }
    void skip(size_t n) { take(n); }
    [[nodiscard]] size_t remaining() const { return n_ - off_; }
    [[nodiscard]] bool done() const { return off_ == n_; }

private:
    const uint8_t* take(size_t n) {
        if (n_ - off_ < n) throw SerializationError("byte stream truncated");
        const uint8_t* p = p_ + off_;
        off_ += n;
        return p;
    }
    template <class T>
    T load() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const uint8_t* p_;
    size_t n_;
    size_t off_ = 0;
};

// ==== Deterministic randomness ====

/**
 * Seeded PRNG with fixed bit-to-double mappings.  The standard distributions
 * are implementation-defined, which would break cross-run trajectory
 * comparisons, so sampling is spelled out here.
 */
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /** Uniform double in [0, 1), 53 significant bits. */
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /** Uniform integer in [lo, hi] by rejection. */
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + int64_t(v % span);
    }

    /** Standard normal via Box-Muller; second draw cached. */
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /** Derive an independent stream (for per-object randomness). */
    [[nodiscard]] Rng fork(uint64_t tag) {
        return Rng(next_u64() ^ (tag * 0x9E3779B97F4A7C15ULL));
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/** Wall-clock milliseconds since the Unix epoch. */
inline uint64_t now_ms() {
    return uint64_t(std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count());
}

}  // namespace hesplit
