// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>

#include "hesplit/tensor.hpp"

namespace hesplit {

/** Labelled signal batch: x [S,C,T], integer labels in [0, classes). */
struct Dataset {
    Tensor x;
    std::vector<int> y;
    size_t classes = 0;

    [[nodiscard]] size_t size() const { return y.size(); }
};

inline Tensor one_hot(const std::vector<int>& y, size_t classes) {
    Tensor t({y.size(), classes});
    for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || size_t(y[i]) >= classes) throw DimensionError("label out of range");
        t(i, size_t(y[i])) = 1.0;
    }
    return t;
}

// ==== Binary tensor records ====
//
// Record layout, all little-endian:
//   magic   "T64\0"
//   dtype   u8   (1 = float64)
//   rank    u8
//   pad     u16  (zero)
//   dims    u32 * rank
//   payload f64 * prod(dims)

inline constexpr uint32_t kT64Magic = 0x00343654;  // "T64\0"

inline void write_tensor_record(ByteWriter& w, const Tensor& t) {
    w.u32(kT64Magic);
    w.u8(1);
    w.u8(uint8_t(t.rank()));
    w.u16(0);
    for (size_t d : t.shape()) w.u32(uint32_t(d));
    for (size_t i = 0; i < t.size(); ++i) w.f64(t[i]);
}

inline Tensor read_tensor_record(ByteReader& r) {
    if (r.u32() != kT64Magic) throw SerializationError("bad tensor magic");
    if (r.u8() != 1) throw SerializationError("unsupported tensor dtype");
    size_t rank = r.u8();
    if (rank == 0 || rank > 4) throw SerializationError("unsupported tensor rank");
    r.u16();
    std::vector<size_t> shape(rank);
    size_t count = 1;
    for (size_t i = 0; i < rank; ++i) {
        shape[i] = r.u32();
        if (shape[i] == 0 || count > (size_t(1) << 32) / std::max<size_t>(1, shape[i]))
            throw SerializationError("tensor dims overflow");
        count *= shape[i];
    }
    Tensor t(shape);
    for (size_t i = 0; i < count; ++i) t[i] = r.f64();
    return t;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    ByteWriter w;
    write_tensor_record(w, ds.x);
    Tensor labels({ds.y.size()});
    for (size_t i = 0; i < ds.y.size(); ++i) labels[i] = double(ds.y[i]);
    write_tensor_record(w, labels);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(w.data().data()), std::streamsize(w.size()));
    if (!f) throw IoError("short write to " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::vector<uint8_t> buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    ByteReader r(buf.data(), buf.size());
    Dataset ds;
    ds.x = read_tensor_record(r);
    if (ds.x.rank() != 3) throw SerializationError("dataset x must be [S,C,T]");
    Tensor labels = read_tensor_record(r);
    if (labels.rank() != 1 || labels.dim(0) != ds.x.dim(0))
        throw SerializationError("dataset label record mismatch");
    ds.y.resize(labels.size());
    int maxy = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        double v = labels[i];
        if (v != std::floor(v) || v < 0) throw SerializationError("labels must be whole");
        ds.y[i] = int(v);
        maxy = std::max(maxy, ds.y[i]);
    }
    ds.classes = size_t(maxy) + 1;
    return ds;
}

// ==== CSV import/export ====
//
// One sample per row: C*T signal values (channel-major) then the label.

inline void save_csv(const std::string& path, const Dataset& ds) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    size_t s = ds.x.dim(0), c = ds.x.dim(1), t = ds.x.dim(2);
    for (size_t i = 0; i < s; ++i) {
        for (size_t j = 0; j < c * t; ++j) f << ds.x[i * c * t + j] << ',';
        f << ds.y[i] << '\n';
    }
}

inline Dataset load_csv(const std::string& path, size_t channels, size_t timesteps) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::vector<double> xs;
    std::vector<int> ys;
    std::string line;
    size_t want = channels * timesteps;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != want + 1)
            throw SerializationError("csv row " + std::to_string(lineno) + " has " +
                                     std::to_string(row.size()) + " cells, want " +
                                     std::to_string(want + 1));
        xs.insert(xs.end(), row.begin(), row.end() - 1);
        ys.push_back(int(row.back()));
    }
    Dataset ds;
    ds.x = Tensor({ys.size(), channels, timesteps}, std::move(xs));
    ds.y = std::move(ys);
    int maxy = 0;
    for (int v : ds.y) maxy = std::max(maxy, v);
    ds.classes = size_t(maxy) + 1;
    return ds;
}

// ==== Synthetic heartbeat-like corpus ====

/**
 * Deterministic stand-in for the public ECG corpora: class-dependent pulse
 * morphology (position, width, amplitude, optional second deflection) on a
 * noisy baseline.  Samples interleave classes so every prefix stays balanced.
 */
inline Dataset synth_dataset(size_t samples, size_t channels, size_t timesteps,
                             uint64_t seed, size_t classes = 5) {
    Dataset ds;
    ds.classes = classes;
    ds.x = Tensor({samples, channels, timesteps});
    ds.y.resize(samples);
    Rng rng(seed);
    double T = double(timesteps);
    for (size_t s = 0; s < samples; ++s) {
        size_t cls = s % classes;
        ds.y[s] = int(cls);
        double center = T * (double(cls) + 1.0) / (double(classes) + 1.0) +
                        rng.uniform(-T / 40.0, T / 40.0);
        double width = T / 24.0 * (1.0 + 0.35 * double(cls));
        double amp = 1.0 + 0.15 * double(cls);
        // Classes alternate the sign of a trailing deflection.
        double echo = (cls % 2 == 0) ? 0.4 : -0.4;
        double phase = rng.uniform(0, 2.0 * 3.14159265358979323846);
        for (size_t c = 0; c < channels; ++c) {
            double ch_gain = 1.0 - 0.04 * double(c);
            for (size_t t = 0; t < timesteps; ++t) {
                double x = double(t);
                double d = (x - center) / width;
                double v = amp * std::exp(-0.5 * d * d);
                double de = (x - center - 2.0 * width) / width;
                v += echo * std::exp(-0.5 * de * de);
                v += 0.05 * std::sin(2.0 * 3.14159265358979323846 * x / T + phase);
                v += 0.05 * rng.normal();
                ds.x(s, c, t) = ch_gain * v;
            }
        }
    }
    return ds;
}

/** Seeded shuffle split; test gets round(fraction*S) samples. */
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                                    uint64_t seed) {
    size_t s = ds.size(), c = ds.x.dim(1), t = ds.x.dim(2);
    std::vector<size_t> idx(s);
    for (size_t i = 0; i < s; ++i) idx[i] = i;
    Rng rng(seed);
    for (size_t i = s; i > 1; --i) std::swap(idx[i - 1], idx[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
    size_t ntest = size_t(std::llround(test_fraction * double(s)));
    auto take = [&](size_t lo, size_t hi) {
        Dataset out;
        out.classes = ds.classes;
        out.x = Tensor({hi - lo, c, t});
        out.y.resize(hi - lo);
        for (size_t i = lo; i < hi; ++i) {
            size_t src = idx[i];
            std::copy(ds.x.data() + src * c * t, ds.x.data() + (src + 1) * c * t,
                      out.x.data() + (i - lo) * c * t);
            out.y[i - lo] = ds.y[src];
        }
        return out;
    };
    return {take(ntest, s), take(0, ntest)};
}

/** Copy rows [lo, hi) of a dataset in order. */
inline Dataset slice_dataset(const Dataset& ds, size_t lo, size_t hi) {
    size_t c = ds.x.dim(1), t = ds.x.dim(2);
    Dataset out;
    out.classes = ds.classes;
    out.x = Tensor({hi - lo, c, t});
    out.y.assign(ds.y.begin() + long(lo), ds.y.begin() + long(hi));
    std::copy(ds.x.data() + lo * c * t, ds.x.data() + hi * c * t, out.x.data());
    return out;
}

}  // namespace hesplit
