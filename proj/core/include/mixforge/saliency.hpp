#pragma once

#include <memory>
#include <vector>

#include "mixforge/models.hpp"
#include "mixforge/tensor.hpp"

namespace mixforge {

// Read-only wrapper around a trained classifier. Construction freezes the
// weights; the handle stays valid for the model's lifetime and is safe to
// share across readers.
class TeacherHandle {
  public:
    explicit TeacherHandle(std::shared_ptr<ClassifierModel> model);

    ClassifierModel& model() const { return *model_; }
    int num_classes() const { return model_->spec().num_classes; }

    // Frozen eval-mode forward passes over plain tensors.
    Tensor logits(const Tensor& images) const;
    Tensor feature_maps(const Tensor& images) const;

  private:
    std::shared_ptr<ClassifierModel> model_;
};

// Min-max normalize a whole map to [0,1]; a constant map becomes all 0.5.
Tensor normalize_map(const Tensor& raw);

// Bilinear resample of a 2-D matrix (corner-aligned grid).
Tensor bilinear_resize(const Tensor& src, int out_h, int out_w);

// Bilinear resample of a saliency map with output clipped to [0,1].
Tensor resize_saliency(const Tensor& map, int out_w, int out_h);

// Class-activation maps for a batch: for each image, the final-conv feature
// maps weighted by the head row of its class, rectified, bilinearly upsampled
// to the image resolution, and min-max normalized.
// images: (B, C, H, W); returns (B, 1, H, W).
Tensor compute_cam(const Tensor& images, const std::vector<int>& class_ids,
                   const TeacherHandle& teacher);

// Teacher's predicted class per image (used when ground-truth labels are
// absent, e.g. transfer visualization).
std::vector<int> teacher_argmax(const TeacherHandle& teacher, const Tensor& images);

}  // namespace mixforge
