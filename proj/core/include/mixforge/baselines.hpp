#pragma once

#include <vector>

#include "mixforge/mixer.hpp"
#include "mixforge/saliency.hpp"
#include "mixforge/tensor.hpp"

namespace mixforge {

// A mixed batch with no gradient tape: the reference baselines and the
// timing comparator produce plain tensors.
struct MixedBatch {
    Tensor images;  // (B,C,H,W)
    Tensor labels;  // (B,num_classes), rows on the simplex
};

// Global convex combination per pair: x' = lambda*x1 + (1-lambda)*x2 with
// lambda ~ Beta(alpha,alpha); labels combined with the same coefficient.
// Pairing consumes streams.pairing, coefficients consume streams.coeffs.
MixedBatch mixup(const Tensor& images, const std::vector<int>& labels, int num_classes,
                 double alpha, MixStreams& streams);

// Rectangular patch of relative area 1-lambda pasted from the partner;
// the label coefficient is the realized (clipped) patch-area fraction.
MixedBatch cutmix(const Tensor& images, const std::vector<int>& labels, int num_classes,
                  double alpha, MixStreams& streams);

// Timing comparator: per-pair mixing masks found by `steps` gradient steps
// on a sigmoid-parameterized mask held against the teacher's soft
// cross-entropy. No transform search, no amortization — this is the
// iterative stand-in the learned module is benchmarked against.
MixedBatch iterative_mask_optimizer(const Tensor& images, const std::vector<int>& labels,
                                    int num_classes, double alpha, int steps,
                                    const TeacherHandle& teacher, MixStreams& streams,
                                    double step_size = 1.0);

}  // namespace mixforge
