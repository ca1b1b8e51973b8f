#include "mixforge/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "mixforge/autodiff.hpp"
#include "mixforge/errors.hpp"

namespace mixforge {

TeacherHandle::TeacherHandle(std::shared_ptr<ClassifierModel> model) : model_(std::move(model)) {
    if (!model_) throw InternalError("TeacherHandle: null model");
    model_->set_trainable(false);
}

Tensor TeacherHandle::logits(const Tensor& images) const {
    return model_->forward(make_value(images, false), /*training=*/false)->val;
}

Tensor TeacherHandle::feature_maps(const Tensor& images) const {
    return model_->features(make_value(images, false), /*training=*/false)->val;
}

Tensor normalize_map(const Tensor& raw) {
    if (!raw.all_finite()) throw NumericError("normalize_map: non-finite input");
    if (raw.numel() == 0) throw InputError("normalize_map: empty input");
    const Scalar lo = raw.min();
    const Scalar hi = raw.max();
    Tensor out = raw;
    if (hi > lo) {
        const Scalar inv = 1 / (hi - lo);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - lo) * inv;
    } else {
        out.fill(Scalar(0.5));
    }
    return out;
}

Tensor bilinear_resize(const Tensor& src, int out_h, int out_w) {
    if (src.rank() != 2) throw InternalError("bilinear_resize expects a 2-D matrix");
    if (out_h < 1 || out_w < 1) throw InputError("bilinear_resize: target dims must be >= 1");
    const int H = src.dim(0), W = src.dim(1);
    Tensor out({out_h, out_w});
    for (int i = 0; i < out_h; ++i) {
        const Scalar sy = out_h > 1 ? static_cast<Scalar>(i) * (H - 1) / (out_h - 1) : 0;
        const int y0 = std::min(static_cast<int>(std::floor(sy)), H - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const Scalar fy = sy - y0;
        for (int j = 0; j < out_w; ++j) {
            const Scalar sx = out_w > 1 ? static_cast<Scalar>(j) * (W - 1) / (out_w - 1) : 0;
            const int x0 = std::min(static_cast<int>(std::floor(sx)), W - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const Scalar fx = sx - x0;
            const Scalar top = (1 - fx) * src.at2(y0, x0) + fx * src.at2(y0, x1);
            const Scalar bot = (1 - fx) * src.at2(y1, x0) + fx * src.at2(y1, x1);
            out.at2(i, j) = (1 - fy) * top + fy * bot;
        }
    }
    return out;
}

Tensor resize_saliency(const Tensor& map, int out_w, int out_h) {
    Tensor out = bilinear_resize(map, out_h, out_w);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], Scalar(0), Scalar(1));
    return out;
}

Tensor compute_cam(const Tensor& images, const std::vector<int>& class_ids,
                   const TeacherHandle& teacher) {
    if (images.rank() != 4) throw InputError("compute_cam: images must be (B,C,H,W)");
    const int B = images.dim(0), H = images.dim(2), W = images.dim(3);
    if (static_cast<int>(class_ids.size()) != B)
        throw InputError("compute_cam: one class id per image required");
    if (!teacher.model().supports_cam())
        throw UnsupportedArchitectureError(
            "compute_cam: teacher lacks a global-average-pool + linear head");
    const int C = teacher.num_classes();
    for (int id : class_ids)
        if (id < 0 || id >= C) throw InputError("compute_cam: class id out of range");

    const Tensor feats = teacher.feature_maps(images);  // (B, K, h, w)
    const int K = feats.dim(1), fh = feats.dim(2), fw = feats.dim(3);
    const Tensor& head_w = teacher.model().head().weight->val;  // (C, K)
    if (head_w.dim(1) != K)
        throw UnsupportedArchitectureError("compute_cam: head width does not match feature maps");

    Tensor out({B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        // Weighted sum of feature channels, rectified.
        Tensor raw({fh, fw});
        const int c = class_ids[static_cast<std::size_t>(b)];
        for (int k = 0; k < K; ++k) {
            const Scalar wk = head_w.at2(c, k);
            const Scalar* plane = feats.data() + ((static_cast<std::int64_t>(b) * K + k) * fh) * fw;
            for (int i = 0; i < fh * fw; ++i) raw[i] += wk * plane[i];
        }
        for (std::int64_t i = 0; i < raw.numel(); ++i) raw[i] = std::max(raw[i], Scalar(0));
        Tensor up = normalize_map(bilinear_resize(raw, H, W));
        std::copy(up.data(), up.data() + up.numel(),
                  out.data() + static_cast<std::int64_t>(b) * H * W);
    }
    return out;
}

std::vector<int> teacher_argmax(const TeacherHandle& teacher, const Tensor& images) {
    const Tensor lg = teacher.logits(images);
    const int B = lg.dim(0), C = lg.dim(1);
    std::vector<int> ids(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (lg.at2(b, c) > lg.at2(b, best)) best = c;
        ids[static_cast<std::size_t>(b)] = best;
    }
    return ids;
}

}  // namespace mixforge
