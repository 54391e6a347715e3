// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <initializer_list>
#include <numeric>

#include "hesplit/common.hpp"

namespace hesplit {

/**
 * Dense row-major tensor of doubles, rank 1..3.
 * Shapes follow the sample-major convention: [n, C, T] for signal batches,
 * [n, d] for flattened activation maps, [out, in, k] for convolution kernels.
 */
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw DimensionError("tensor data does not match shape");
    }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    [[nodiscard]] const std::vector<size_t>& shape() const { return shape_; }
    [[nodiscard]] size_t rank() const { return shape_.size(); }
    [[nodiscard]] size_t dim(size_t i) const { return shape_.at(i); }
    [[nodiscard]] size_t size() const { return data_.size(); }

    [[nodiscard]] double* data() { return data_.data(); }
    [[nodiscard]] const double* data() const { return data_.data(); }
    [[nodiscard]] std::vector<double>& vec() { return data_; }
    [[nodiscard]] const std::vector<double>& vec() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    const double& operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(size_t i, size_t j, size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const double& operator()(size_t i, size_t j, size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /** Reinterpret with a new shape of identical element count. */
    [[nodiscard]] Tensor reshaped(std::vector<size_t> shape) const {
        if (count(shape) != data_.size())
            throw DimensionError("reshape changes element count");
        return Tensor(std::move(shape), data_);
    }

    [[nodiscard]] bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor& operator+=(const Tensor& o) {
        require_same(o);
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same(o);
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    [[nodiscard]] double max_abs_diff(const Tensor& o) const {
        require_same(o);
        double m = 0.0;
        for (size_t i = 0; i < data_.size(); ++i)
            m = std::max(m, std::abs(data_[i] - o.data_[i]));
        return m;
    }

private:
    static size_t count(const std::vector<size_t>& s) {
        if (s.empty()) return 0;
        return std::accumulate(s.begin(), s.end(), size_t(1), std::multiplies<>());
    }
    void require_same(const Tensor& o) const {
        if (!same_shape(o)) throw DimensionError("tensor shapes differ");
    }

    std::vector<size_t> shape_;
    std::vector<double> data_;
};

}  // namespace hesplit
