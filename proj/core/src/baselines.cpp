#include "mixforge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "mixforge/autodiff.hpp"
#include "mixforge/data.hpp"
#include "mixforge/errors.hpp"

namespace mixforge {

namespace {

void check_batch(const Tensor& images, const std::vector<int>& labels, int num_classes,
                 double alpha, const char* where) {
    if (images.rank() != 4) throw InputError(std::string(where) + ": images must be (B,C,H,W)");
    if (images.dim(0) != static_cast<std::int64_t>(labels.size()))
        throw InputError(std::string(where) + ": label count does not match batch");
    if (images.dim(0) < 1) throw InputError(std::string(where) + ": batch must be non-empty");
    if (num_classes < 2) throw InputError(std::string(where) + ": need at least two classes");
    if (!(alpha > 0)) throw InputError(std::string(where) + ": alpha must be positive");
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw InputError(std::string(where) + ": label out of range");
}

}  // namespace

MixedBatch mixup(const Tensor& images, const std::vector<int>& labels, int num_classes,
                 double alpha, MixStreams& streams) {
    check_batch(images, labels, num_classes, alpha, "mixup");
    const std::int64_t b_n = images.dim(0);
    const std::int64_t plane = images.numel() / b_n;

    const std::vector<int> pairs = pair_batch(static_cast<int>(b_n), 2, streams.pairing);
    const Tensor lambdas = sample_coefficients_batch(alpha, 2, static_cast<int>(b_n), streams.coeffs);

    MixedBatch out;
    out.images = Tensor(images.shape());
    out.labels = Tensor({static_cast<int>(b_n), num_classes});
    for (std::int64_t b = 0; b < b_n; ++b) {
        const int j = pairs[static_cast<std::size_t>(b) * 2 + 1];
        const Scalar lam = lambdas[b * 2];
        const Scalar* x1 = images.data() + b * plane;
        const Scalar* x2 = images.data() + static_cast<std::int64_t>(j) * plane;
        Scalar* dst = out.images.data() + b * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = lam * x1[i] + (1 - lam) * x2[i];
        out.labels[b * num_classes + labels[static_cast<std::size_t>(b)]] += lam;
        out.labels[b * num_classes + labels[static_cast<std::size_t>(j)]] += 1 - lam;
    }
    return out;
}

MixedBatch cutmix(const Tensor& images, const std::vector<int>& labels, int num_classes,
                  double alpha, MixStreams& streams) {
    check_batch(images, labels, num_classes, alpha, "cutmix");
    const std::int64_t b_n = images.dim(0);
    const int c_n = static_cast<int>(images.dim(1));
    const int h = static_cast<int>(images.dim(2));
    const int w = static_cast<int>(images.dim(3));
    const std::int64_t plane = static_cast<std::int64_t>(c_n) * h * w;

    const std::vector<int> pairs = pair_batch(static_cast<int>(b_n), 2, streams.pairing);

    MixedBatch out;
    out.images = images;  // start from x1, then paste the partner patch
    out.labels = Tensor({static_cast<int>(b_n), num_classes});
    for (std::int64_t b = 0; b < b_n; ++b) {
        const int j = pairs[static_cast<std::size_t>(b) * 2 + 1];
        const Scalar lam = sample_coefficients(alpha, 2, streams.coeffs)[0];
        // Patch of relative area 1-lambda around a uniform center, clipped
        // at the borders.
        const double cut_rat = std::sqrt(1.0 - lam);
        const int cut_w = static_cast<int>(w * cut_rat);
        const int cut_h = static_cast<int>(h * cut_rat);
        const int cx = static_cast<int>(streams.coeffs.index(w));
        const int cy = static_cast<int>(streams.coeffs.index(h));
        const int x1 = std::clamp(cx - cut_w / 2, 0, w);
        const int x2 = std::clamp(cx + cut_w / 2, 0, w);
        const int y1 = std::clamp(cy - cut_h / 2, 0, h);
        const int y2 = std::clamp(cy + cut_h / 2, 0, h);

        const Scalar* src = images.data() + static_cast<std::int64_t>(j) * plane;
        Scalar* dst = out.images.data() + b * plane;
        for (int c = 0; c < c_n; ++c)
            for (int y = y1; y < y2; ++y) {
                const std::int64_t row = (static_cast<std::int64_t>(c) * h + y) * w;
                for (int x = x1; x < x2; ++x) dst[row + x] = src[row + x];
            }

        // Label coefficient from the realized (clipped) area, not the draw.
        const double area = static_cast<double>(x2 - x1) * (y2 - y1);
        const Scalar lam_real = 1.0 - area / (static_cast<double>(w) * h);
        out.labels[b * num_classes + labels[static_cast<std::size_t>(b)]] += lam_real;
        out.labels[b * num_classes + labels[static_cast<std::size_t>(j)]] += 1 - lam_real;
    }
    return out;
}

MixedBatch iterative_mask_optimizer(const Tensor& images, const std::vector<int>& labels,
                                    int num_classes, double alpha, int steps,
                                    const TeacherHandle& teacher, MixStreams& streams,
                                    double step_size) {
    check_batch(images, labels, num_classes, alpha, "iterative_mask_optimizer");
    if (steps < 1) throw InputError("iterative_mask_optimizer: steps must be >= 1");
    const std::int64_t b_n = images.dim(0);
    const std::int64_t plane = images.numel() / b_n;

    const std::vector<int> pairs = pair_batch(static_cast<int>(b_n), 2, streams.pairing);
    const Tensor lambdas = sample_coefficients_batch(alpha, 2, static_cast<int>(b_n), streams.coeffs);

    Tensor partner(images.shape());
    Tensor soft({static_cast<int>(b_n), num_classes});
    for (std::int64_t b = 0; b < b_n; ++b) {
        const int j = pairs[static_cast<std::size_t>(b) * 2 + 1];
        std::copy_n(images.data() + static_cast<std::int64_t>(j) * plane, plane,
                    partner.data() + b * plane);
        const Scalar lam = lambdas[b * 2];
        soft[b * num_classes + labels[static_cast<std::size_t>(b)]] += lam;
        soft[b * num_classes + labels[static_cast<std::size_t>(j)]] += 1 - lam;
    }

    const Value x1 = make_value(images, false);
    const Value x2 = make_value(partner, false);
    Tensor logits_state({static_cast<int>(b_n), 1, static_cast<int>(images.dim(2)),
                         static_cast<int>(images.dim(3))});

    // Plain gradient descent on the mask logits against the teacher's soft
    // cross-entropy; a fresh tape per step, nothing amortized.
    for (int step = 0; step < steps; ++step) {
        Value o = make_leaf(logits_state);
        Value m = vsigmoid(o);
        Value inv = add_scalar(scale(m, -1.0), 1.0);
        Value xp = add(mul_channels(x1, m), mul_channels(x2, inv));
        Value logits = teacher.model().forward(xp, /*training=*/false);
        Value loss = soft_cross_entropy_loss(logits, soft);
        backward(loss);
        for (std::int64_t i = 0; i < logits_state.numel(); ++i)
            logits_state[i] -= step_size * o->grad[i];
    }

    // Compose the mix from the final mask (one more sigmoid, no tape).
    MixedBatch out;
    out.images = Tensor(images.shape());
    const std::int64_t hw = images.dim(2) * images.dim(3);
    for (std::int64_t b = 0; b < b_n; ++b)
        for (std::int64_t c = 0; c < images.dim(1); ++c)
            for (std::int64_t p = 0; p < hw; ++p) {
                const Scalar z = logits_state[b * hw + p];
                const Scalar mv =
                    z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                const std::int64_t at = (b * images.dim(1) + c) * hw + p;
                out.images[at] = mv * images[at] + (1 - mv) * partner[at];
            }
    out.labels = std::move(soft);
    return out;
}

}  // namespace mixforge
