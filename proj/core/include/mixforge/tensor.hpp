#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "mixforge/errors.hpp"

namespace mixforge {

/// Element type used throughout the library. Double keeps gradient checks
/// and long accumulation chains comfortably inside tolerance.
using Scalar = double;

/// Dense row-major tensor of Scalars with up to a handful of dimensions.
/// Rank-0 tensors (numel 1, empty shape) represent scalars such as losses.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor scalar(Scalar v);
    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, Scalar v);

    const std::vector<int>& shape() const noexcept { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }
    std::vector<Scalar>& storage() noexcept { return data_; }
    const std::vector<Scalar>& storage() const noexcept { return data_; }

    Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Unchecked multi-dimensional access for the hot paths.
    Scalar& at2(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    Scalar at2(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    Scalar& at3(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Scalar at3(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Scalar& at4(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    Scalar at4(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(Scalar v);
    Tensor reshaped(std::vector<int> shape) const;

    Scalar min() const;
    Scalar max() const;
    Scalar sum() const;
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Largest absolute elementwise difference; shapes must match.
    static Scalar max_abs_diff(const Tensor& a, const Tensor& b);

private:
    std::vector<int> shape_;
    std::vector<Scalar> data_;
};

/// Throws InternalError mentioning `where` unless the two shapes agree.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace mixforge
