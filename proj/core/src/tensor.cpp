#include "mixforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mixforge {

namespace {
std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw InternalError("negative tensor dimension");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), Scalar(0)) {}

Tensor Tensor::scalar(Scalar v) {
    Tensor t(std::vector<int>{});
    t.data_.assign(1, v);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, Scalar v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) throw InternalError("reshape changes element count");
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
}

Scalar Tensor::min() const {
    if (data_.empty()) throw InternalError("min of empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

Scalar Tensor::max() const {
    if (data_.empty()) throw InternalError("max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

Scalar Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), Scalar(0)); }

bool Tensor::all_finite() const {
    for (Scalar v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Scalar Tensor::max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    Scalar m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (a.shape() == b.shape()) return;
    std::ostringstream os;
    os << where << ": shape mismatch [";
    for (int d : a.shape()) os << d << " ";
    os << "] vs [";
    for (int d : b.shape()) os << d << " ";
    os << "]";
    throw InternalError(os.str());
}

}  // namespace mixforge
