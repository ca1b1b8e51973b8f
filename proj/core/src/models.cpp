#include "mixforge/models.hpp"

#include <algorithm>

#include "mixforge/errors.hpp"

namespace mixforge {

Value ClassifierModel::forward(const Value& x, bool training) {
    return head().forward(global_avg_pool(features(x, training)));
}

void ClassifierModel::set_trainable(bool trainable) {
    for (auto& p : named_parameters()) p.value->requires_grad = trainable;
}

std::vector<Value> ClassifierModel::trainable_parameters() {
    std::vector<Value> out;
    for (auto& p : named_parameters())
        if (p.value->requires_grad) out.push_back(p.value);
    return out;
}

std::int64_t ClassifierModel::parameter_count() {
    std::int64_t n = 0;
    for (auto& p : named_parameters()) n += p.value->val.numel();
    return n;
}

namespace {

// ---------------------------------------------------------------------------
// toy-cnn: two 3x3 convolutions, deliberately tiny so double-precision
// finite-difference checks stay tractable.
// ---------------------------------------------------------------------------

class ToyCnn final : public ClassifierModel {
  public:
    ToyCnn(const ArchSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        RngStream rng = derive_stream(seed, "init:toy-cnn");
        conv1_ = Conv2dLayer(spec.in_channels, 8, 3, 1, 1, rng);
        conv2_ = Conv2dLayer(8, 16, 3, 1, 1, rng);
        fc_ = LinearLayer(16, spec.num_classes, rng);
    }

    Value features(const Value& x, bool) override {
        Value h = relu(conv1_.forward(x));
        h = maxpool2(h);
        return relu(conv2_.forward(h));
    }

    LinearLayer& head() override { return fc_; }

    std::vector<NamedTensor> named_parameters() override {
        std::vector<NamedTensor> out;
        conv1_.collect("conv1", out);
        conv2_.collect("conv2", out);
        fc_.collect("fc", out);
        return out;
    }

    std::vector<NamedBuffer> named_buffers() override { return {}; }

  private:
    Conv2dLayer conv1_, conv2_;
    LinearLayer fc_;
};

// ---------------------------------------------------------------------------
// Pre-activation basic block (used by preact-resnet-18 and wide-resnet).
// ---------------------------------------------------------------------------

struct PreActBlock {
    BatchNorm2dLayer bn1, bn2;
    Conv2dLayer conv1, conv2;
    Conv2dLayer shortcut;
    bool has_shortcut = false;

    PreActBlock() = default;
    PreActBlock(int in_ch, int out_ch, int stride, RngStream& rng) {
        bn1 = BatchNorm2dLayer(in_ch);
        conv1 = Conv2dLayer(in_ch, out_ch, 3, stride, 1, rng, /*with_bias=*/false);
        bn2 = BatchNorm2dLayer(out_ch);
        conv2 = Conv2dLayer(out_ch, out_ch, 3, 1, 1, rng, /*with_bias=*/false);
        has_shortcut = stride != 1 || in_ch != out_ch;
        if (has_shortcut) shortcut = Conv2dLayer(in_ch, out_ch, 1, stride, 0, rng, /*with_bias=*/false);
    }

    Value forward(const Value& x, bool training) {
        Value o = relu(bn1.forward(x, training));
        Value s = has_shortcut ? shortcut.forward(o) : x;
        Value h = conv1.forward(o);
        h = conv2.forward(relu(bn2.forward(h, training)));
        return add(h, s);
    }

    void collect(const std::string& p, std::vector<NamedTensor>& out) {
        bn1.collect(p + ".bn1", out);
        conv1.collect(p + ".conv1", out);
        bn2.collect(p + ".bn2", out);
        conv2.collect(p + ".conv2", out);
        if (has_shortcut) shortcut.collect(p + ".shortcut", out);
    }

    void collect_buffers(const std::string& p, std::vector<NamedBuffer>& out) {
        bn1.collect_buffers(p + ".bn1", out);
        bn2.collect_buffers(p + ".bn2", out);
    }
};

class PreActResNet final : public ClassifierModel {
  public:
    // widths/blocks describe the three-or-four stage trunk; CIFAR-style stem.
    PreActResNet(const ArchSpec& spec, std::uint64_t seed, const std::string& stream_name,
                 std::vector<int> widths, std::vector<int> blocks, std::vector<int> strides,
                 int stem_width) {
        spec_ = spec;
        RngStream rng = derive_stream(seed, stream_name);
        stem_ = Conv2dLayer(spec.in_channels, stem_width, 3, 1, 1, rng, /*with_bias=*/false);
        int in_ch = stem_width;
        for (std::size_t g = 0; g < widths.size(); ++g) {
            for (int b = 0; b < blocks[g]; ++b) {
                const int stride = b == 0 ? strides[g] : 1;
                blocks_.emplace_back(in_ch, widths[g], stride, rng);
                in_ch = widths[g];
            }
        }
        final_bn_ = BatchNorm2dLayer(in_ch);
        fc_ = LinearLayer(in_ch, spec.num_classes, rng);
    }

    Value features(const Value& x, bool training) override {
        Value h = stem_.forward(x);
        for (auto& b : blocks_) h = b.forward(h, training);
        return relu(final_bn_.forward(h, training));
    }

    LinearLayer& head() override { return fc_; }

    std::vector<NamedTensor> named_parameters() override {
        std::vector<NamedTensor> out;
        stem_.collect("stem", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("block" + std::to_string(i), out);
        final_bn_.collect("final_bn", out);
        fc_.collect("fc", out);
        return out;
    }

    std::vector<NamedBuffer> named_buffers() override {
        std::vector<NamedBuffer> out;
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_buffers("block" + std::to_string(i), out);
        final_bn_.collect_buffers("final_bn", out);
        return out;
    }

  private:
    Conv2dLayer stem_;
    std::vector<PreActBlock> blocks_;
    BatchNorm2dLayer final_bn_;
    LinearLayer fc_;
};

// ---------------------------------------------------------------------------
// Standard post-activation ResNet-18 with an ImageNet-style stem.
// ---------------------------------------------------------------------------

struct BasicBlock {
    Conv2dLayer conv1, conv2;
    BatchNorm2dLayer bn1, bn2;
    Conv2dLayer sc_conv;
    BatchNorm2dLayer sc_bn;
    bool has_shortcut = false;

    BasicBlock() = default;
    BasicBlock(int in_ch, int out_ch, int stride, RngStream& rng) {
        conv1 = Conv2dLayer(in_ch, out_ch, 3, stride, 1, rng, /*with_bias=*/false);
        bn1 = BatchNorm2dLayer(out_ch);
        conv2 = Conv2dLayer(out_ch, out_ch, 3, 1, 1, rng, /*with_bias=*/false);
        bn2 = BatchNorm2dLayer(out_ch);
        has_shortcut = stride != 1 || in_ch != out_ch;
        if (has_shortcut) {
            sc_conv = Conv2dLayer(in_ch, out_ch, 1, stride, 0, rng, /*with_bias=*/false);
            sc_bn = BatchNorm2dLayer(out_ch);
        }
    }

    Value forward(const Value& x, bool training) {
        Value h = relu(bn1.forward(conv1.forward(x), training));
        h = bn2.forward(conv2.forward(h), training);
        Value s = has_shortcut ? sc_bn.forward(sc_conv.forward(x), training) : x;
        return relu(add(h, s));
    }

    void collect(const std::string& p, std::vector<NamedTensor>& out) {
        conv1.collect(p + ".conv1", out);
        bn1.collect(p + ".bn1", out);
        conv2.collect(p + ".conv2", out);
        bn2.collect(p + ".bn2", out);
        if (has_shortcut) {
            sc_conv.collect(p + ".sc_conv", out);
            sc_bn.collect(p + ".sc_bn", out);
        }
    }

    void collect_buffers(const std::string& p, std::vector<NamedBuffer>& out) {
        bn1.collect_buffers(p + ".bn1", out);
        bn2.collect_buffers(p + ".bn2", out);
        if (has_shortcut) sc_bn.collect_buffers(p + ".sc_bn", out);
    }
};

class ResNet18 final : public ClassifierModel {
  public:
    ResNet18(const ArchSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        RngStream rng = derive_stream(seed, "init:resnet-18");
        stem_ = Conv2dLayer(spec.in_channels, 64, 7, 2, 3, rng, /*with_bias=*/false);
        stem_bn_ = BatchNorm2dLayer(64);
        const int widths[4] = {64, 128, 256, 512};
        const int strides[4] = {1, 2, 2, 2};
        int in_ch = 64;
        for (int g = 0; g < 4; ++g) {
            for (int b = 0; b < 2; ++b) {
                blocks_.emplace_back(in_ch, widths[g], b == 0 ? strides[g] : 1, rng);
                in_ch = widths[g];
            }
        }
        fc_ = LinearLayer(512, spec.num_classes, rng);
    }

    Value features(const Value& x, bool training) override {
        Value h = relu(stem_bn_.forward(stem_.forward(x), training));
        h = maxpool2(h);
        for (auto& b : blocks_) h = b.forward(h, training);
        return h;
    }

    LinearLayer& head() override { return fc_; }

    std::vector<NamedTensor> named_parameters() override {
        std::vector<NamedTensor> out;
        stem_.collect("stem", out);
        stem_bn_.collect("stem_bn", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("block" + std::to_string(i), out);
        fc_.collect("fc", out);
        return out;
    }

    std::vector<NamedBuffer> named_buffers() override {
        std::vector<NamedBuffer> out;
        stem_bn_.collect_buffers("stem_bn", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_buffers("block" + std::to_string(i), out);
        return out;
    }

  private:
    Conv2dLayer stem_;
    BatchNorm2dLayer stem_bn_;
    std::vector<BasicBlock> blocks_;
    LinearLayer fc_;
};

}  // namespace

std::unique_ptr<ClassifierModel> build_model(const ArchSpec& spec, std::uint64_t init_seed) {
    if (spec.num_classes < 2) throw ConfigError("model needs at least 2 classes");
    if (spec.in_channels < 1) throw ConfigError("model needs at least 1 input channel");
    if (spec.family == "toy-cnn") return std::make_unique<ToyCnn>(spec, init_seed);
    if (spec.family == "preact-resnet-18")
        return std::make_unique<PreActResNet>(spec, init_seed, "init:preact-resnet-18",
                                              std::vector<int>{64, 128, 256, 512},
                                              std::vector<int>{2, 2, 2, 2},
                                              std::vector<int>{1, 2, 2, 2}, 64);
    if (spec.family == "wide-resnet-28-10")
        return std::make_unique<PreActResNet>(spec, init_seed, "init:wide-resnet-28-10",
                                              std::vector<int>{160, 320, 640},
                                              std::vector<int>{4, 4, 4},
                                              std::vector<int>{1, 2, 2}, 16);
    if (spec.family == "resnet-18") return std::make_unique<ResNet18>(spec, init_seed);
    throw ConfigError("unknown architecture family: " + spec.family);
}

std::vector<std::string> registered_architectures() {
    return {"toy-cnn", "preact-resnet-18", "wide-resnet-28-10", "resnet-18"};
}

}  // namespace mixforge
