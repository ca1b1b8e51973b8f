#include "mixforge/nn.hpp"

#include <cmath>

#include "mixforge/errors.hpp"

namespace mixforge {

Tensor he_normal(const std::vector<int>& shape, std::int64_t fan_in, RngStream& rng) {
    if (fan_in <= 0) throw InternalError("he_normal: fan_in must be positive");
    Tensor t(shape);
    const Scalar std_dev = std::sqrt(Scalar(2) / static_cast<Scalar>(fan_in));
    rng.fill_normal(t, 0.0, std_dev);
    return t;
}

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int kernel, int stride_, int pad_, RngStream& rng,
                         bool with_bias)
    : stride(stride_), pad(pad_), has_bias(with_bias) {
    weight = make_leaf(
        he_normal({out_ch, in_ch, kernel, kernel},
                  static_cast<std::int64_t>(in_ch) * kernel * kernel, rng));
    bias = make_leaf(Tensor::zeros({out_ch}));
    if (!with_bias) bias->requires_grad = false;
}

Value Conv2dLayer::forward(const Value& x) const { return conv2d(x, weight, bias, stride, pad); }

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (has_bias) out.push_back({prefix + ".bias", bias});
}

LinearLayer::LinearLayer(int in_dim, int out_dim, RngStream& rng) {
    weight = make_leaf(he_normal({out_dim, in_dim}, in_dim, rng));
    bias = make_leaf(Tensor::zeros({out_dim}));
}

Value LinearLayer::forward(const Value& x) const { return linear(x, weight, bias); }

void LinearLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

BatchNorm2dLayer::BatchNorm2dLayer(int channels) {
    gamma = make_leaf(Tensor::full({channels}, 1));
    beta = make_leaf(Tensor::zeros({channels}));
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1);
}

Value BatchNorm2dLayer::forward(const Value& x, bool training) {
    return batch_norm2d(x, gamma, beta, &running_mean, &running_var, training, momentum, eps);
}

void BatchNorm2dLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

void BatchNorm2dLayer::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
}

SgdOptimizer::SgdOptimizer(std::vector<Value> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p->val.shape()));
}

void SgdOptimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Value& p = params_[i];
        if (!p->requires_grad) continue;
        if (p->grad.numel() != p->val.numel()) continue;  // no gradient this step
        Tensor& v = velocity_[i];
        for (std::int64_t j = 0; j < p->val.numel(); ++j) {
            const Scalar g = p->grad[j] + cfg_.weight_decay * p->val[j];
            v[j] = cfg_.momentum * v[j] + g;
            p->val[j] -= cfg_.lr * v[j];
        }
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace mixforge
