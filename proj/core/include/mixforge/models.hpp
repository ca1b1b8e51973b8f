#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mixforge/nn.hpp"

namespace mixforge {

struct ArchSpec {
    std::string family = "toy-cnn";
    int in_channels = 3;
    int input_w = 32;
    int input_h = 32;
    int num_classes = 10;
};

// A classifier with the structure CAM extraction requires: a convolutional
// trunk producing final feature maps, global average pooling, and a single
// linear head.
class ClassifierModel {
  public:
    virtual ~ClassifierModel() = default;

    const ArchSpec& spec() const { return spec_; }

    // Final-conv feature maps (B, K, h, w): exactly the tensor that feeds
    // global average pooling.
    virtual Value features(const Value& x, bool training) = 0;

    // Logits (B, num_classes) = head(GAP(features(x))).
    Value forward(const Value& x, bool training);

    virtual LinearLayer& head() = 0;
    const LinearLayer& head() const { return const_cast<ClassifierModel*>(this)->head(); }

    virtual std::vector<NamedTensor> named_parameters() = 0;
    virtual std::vector<NamedBuffer> named_buffers() = 0;

    // True when the architecture ends in global-average-pool + linear, the
    // structure class-activation mapping needs.
    virtual bool supports_cam() const { return true; }

    void set_trainable(bool trainable);
    std::vector<Value> trainable_parameters();
    std::int64_t parameter_count();

  protected:
    ArchSpec spec_;
};

std::unique_ptr<ClassifierModel> build_model(const ArchSpec& spec, std::uint64_t init_seed);
std::vector<std::string> registered_architectures();

}  // namespace mixforge
