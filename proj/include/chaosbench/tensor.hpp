#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "chaosbench/common.hpp"

namespace chaosbench {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMatrix>;
using ConstMatMap = Eigen::Map<const EigenMatrix>;

// Fixed 64-byte alignment keeps SIMD kernel dispatch identical across runs,
// so repeated in-process executions stay bitwise reproducible.
template <class T, std::size_t Align>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }

    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    bool operator==(const AlignedAllocator&) const { return true; }
    bool operator!=(const AlignedAllocator&) const { return false; }
};

using DataVector = std::vector<double, AlignedAllocator<double, 64>>;

// Dense row-major tensor of float64 values. All model math runs on these.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::int64_t> shape, const std::vector<double>& data)
        : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
            throw ShapeError("Tensor: data length does not match shape");
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t ndim() const { return shape_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    DataVector& storage() { return data_; }
    const DataVector& storage() const { return data_; }

    // Features live in the last axis; everything before it is a row index.
    std::int64_t last_dim() const {
        if (shape_.empty()) throw ShapeError("Tensor: last_dim of rank-0 tensor");
        return shape_.back();
    }
    std::int64_t rows_for_last_dim() const {
        const std::int64_t ld = last_dim();
        return ld == 0 ? 0 : numel() / ld;
    }

    MatMap mat(std::int64_t rows, std::int64_t cols) {
        if (rows * cols != numel()) throw ShapeError("Tensor: bad matrix view " + shape_str());
        return MatMap(data_.data(), rows, cols);
    }
    ConstMatMap mat(std::int64_t rows, std::int64_t cols) const {
        if (rows * cols != numel()) throw ShapeError("Tensor: bad matrix view " + shape_str());
        return ConstMatMap(data_.data(), rows, cols);
    }
    ConstMatMap cmat(std::int64_t rows, std::int64_t cols) const { return mat(rows, cols); }
    MatMap mat2d() { return mat(rows_for_last_dim(), last_dim()); }
    ConstMatMap mat2d() const { return mat(rows_for_last_dim(), last_dim()); }

    // Reinterpret the same storage under a new shape (numel must match).
    Tensor reshaped(std::vector<std::int64_t> shape) const {
        Tensor t(std::move(shape), data_);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        if (shape.empty()) throw ShapeError("Tensor: empty shape");
        std::int64_t n = 1;
        for (auto e : shape) {
            if (e < 0) throw ShapeError("Tensor: negative extent");
            n *= e;
        }
        return n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

inline double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
}

}  // namespace chaosbench
