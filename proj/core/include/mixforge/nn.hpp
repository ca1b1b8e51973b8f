#pragma once

#include <string>
#include <vector>

#include "mixforge/autodiff.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

// A trainable tensor (or persistent buffer) addressed by a stable name.
// Names are hierarchical, e.g. "block2.conv1.weight".
struct NamedTensor {
    std::string name;
    Value value;
};

struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

// He-normal initialization: std = sqrt(2 / fan_in).
Tensor he_normal(const std::vector<int>& shape, std::int64_t fan_in, RngStream& rng);

struct Conv2dLayer {
    Value weight;  // (O, C, kh, kw)
    Value bias;    // (O)
    int stride = 1;
    int pad = 0;
    bool has_bias = true;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int pad, RngStream& rng,
                bool with_bias = true);

    Value forward(const Value& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct LinearLayer {
    Value weight;  // (O, D)
    Value bias;    // (O)

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim, RngStream& rng);

    Value forward(const Value& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNorm2dLayer {
    Value gamma;  // (C)
    Value beta;   // (C)
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int channels);

    Value forward(const Value& x, bool training);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
};

// Plain SGD with optional Nesterov-free momentum and coupled L2 weight decay:
//   g <- grad + weight_decay * param
//   v <- momentum * v + g
//   param <- param - lr * v
struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<Value> params, SgdConfig cfg);

    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

  private:
    std::vector<Value> params_;
    std::vector<Tensor> velocity_;
    SgdConfig cfg_;
};

}  // namespace mixforge
