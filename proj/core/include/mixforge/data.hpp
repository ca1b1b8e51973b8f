#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixforge/rng.hpp"
#include "mixforge/tensor.hpp"

namespace mixforge {

struct DatasetSpec {
    std::string name;           // cifar10 | cifar100 | image-folder
    std::string path;           // dataset root
    std::string split = "train";  // train | test
    double subset_fraction = 1.0;  // (0,1]; stratified, train split only
    std::uint64_t seed = 0;        // seeds the subset draw
};

struct ImageBatch {
    Tensor images;            // (B,C,H,W), normalized per channel
    std::vector<int> labels;  // in [0, num_classes)
};

// An in-memory split with raw pixels in [0,1] and the per-channel
// normalization statistics of the (subsetted) train split.
class Dataset {
  public:
    static Dataset load(const DatasetSpec& spec);

    int size() const { return static_cast<int>(labels_.size()); }
    int num_classes() const { return num_classes_; }
    int channels() const { return channels_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<int>& labels() const { return labels_; }
    const Tensor& mean() const { return mean_; }
    const Tensor& stddev() const { return stddev_; }

    // Raw [0,1] image (C,H,W) — visualization and fixtures.
    Tensor raw_image(int index) const;

    // Normalized batch for the given indices. With `augment`, applies the
    // standard 4-pixel-pad random crop and horizontal flip, consuming
    // `aug_rng` (required in that case).
    ImageBatch batch(const std::vector<int>& indices, bool augment = false,
                     RngStream* aug_rng = nullptr) const;

    // All indices 0..size-1.
    std::vector<int> all_indices() const;

  private:
    int num_classes_ = 0;
    int channels_ = 0, width_ = 0, height_ = 0;
    Tensor images_;  // (N,C,H,W) raw [0,1]
    std::vector<int> labels_;
    Tensor mean_, stddev_;  // (C)
};

// Stratified subset of `labels` at `fraction`, seeded: per-class quotas by
// largest remainder, members drawn by seeded shuffle, result sorted
// ascending. Preserves class proportions exactly when divisible, within
// one sample otherwise.
std::vector<int> stratified_subset(const std::vector<int>& labels, int num_classes,
                                   double fraction, std::uint64_t seed);

// Index tuples for mixing: (B*k) row-major, column 0 the batch itself,
// columns 1..k-1 independent uniform permutations (self-pairs allowed).
std::vector<int> pair_batch(int batch_size, int k, RngStream& rng);

// (B, num_classes) with row b one-hot at labels[b]. Labels must be in range.
Tensor one_hot(const std::vector<int>& labels, int num_classes);

}  // namespace mixforge
