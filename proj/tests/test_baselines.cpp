#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixforge/baselines.hpp"
#include "mixforge/mixer.hpp"
#include "mixforge/models.hpp"
#include "mixforge/rng.hpp"
#include "support/oracles.hpp"

using namespace mixforge;

namespace {

Tensor random_images(int b, int c, int side, std::uint64_t seed) {
    Tensor t({b, c, side, side});
    RngStream rng(seed);
    rng.fill_uniform(t, 0.0, 1.0);
    return t;
}

// One constant image per sample: pixel value = its class id. Makes the
// image/label linearity of mixing exactly checkable.
Tensor class_constant_images(int b, int side) {
    Tensor t({b, 1, side, side});
    for (int i = 0; i < b; ++i)
        for (int p = 0; p < side * side; ++p) t[static_cast<std::int64_t>(i) * side * side + p] = i;
    return t;
}

std::vector<int> iota_labels(int b) {
    std::vector<int> l(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) l[static_cast<std::size_t>(i)] = i;
    return l;
}

TeacherHandle tiny_teacher(int side, int classes, std::uint64_t seed) {
    ArchSpec spec;
    spec.family = "toy-cnn";
    spec.in_channels = 1;
    spec.input_w = side;
    spec.input_h = side;
    spec.num_classes = classes;
    return TeacherHandle(std::shared_ptr<ClassifierModel>(build_model(spec, seed)));
}

}  // namespace

TEST_CASE("mixup obeys the linearity oracle: mixed pixels equal the label-weighted class values") {
    const int B = 6, side = 4;
    const Tensor images = class_constant_images(B, side);
    const std::vector<int> labels = iota_labels(B);
    MixStreams streams = MixStreams::from_seed(1);
    const MixedBatch out = mixup(images, labels, B, 1.0, streams);

    REQUIRE(out.images.shape() == images.shape());
    REQUIRE(out.labels.shape() == std::vector<int>{B, B});
    for (int b = 0; b < B; ++b) {
        // Expected constant pixel: sum_c mass_c * c.
        Scalar want = 0, mass = 0;
        for (int c = 0; c < B; ++c) {
            CHECK(out.labels.at2(b, c) >= 0.0);
            want += out.labels.at2(b, c) * c;
            mass += out.labels.at2(b, c);
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
        for (int p = 0; p < side * side; ++p)
            CHECK(out.images[static_cast<std::int64_t>(b) * side * side + p] ==
                  doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("mixup mean-pixel linearity holds on random images") {
    const int B = 4, side = 8;
    const Tensor images = random_images(B, 3, side, 2);
    const std::vector<int> labels = {0, 1, 2, 3};
    MixStreams streams = MixStreams::from_seed(3);
    const MixedBatch out = mixup(images, labels, 4, 0.5, streams);

    // Recover each pair's partner and coefficient from the label row, then
    // verify mean(mixed) = lambda*mean(x_b) + (1-lambda)*mean(x_p).
    const std::int64_t plane = 3LL * side * side;
    auto mean_of = [&](const Tensor& t, int b) {
        Scalar s = 0;
        for (std::int64_t i = 0; i < plane; ++i) s += t[b * plane + i];
        return s / Scalar(plane);
    };
    for (int b = 0; b < B; ++b) {
        Scalar want = 0;
        for (int c = 0; c < 4; ++c) want += out.labels.at2(b, c) * mean_of(images, c);
        CHECK(mean_of(out.images, b) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("mixup is deterministic under a fixed stream seed") {
    const Tensor images = random_images(5, 3, 6, 4);
    const std::vector<int> labels = {0, 1, 0, 1, 0};
    MixStreams s1 = MixStreams::from_seed(9);
    MixStreams s2 = MixStreams::from_seed(9);
    const MixedBatch a = mixup(images, labels, 2, 1.0, s1);
    const MixedBatch b = mixup(images, labels, 2, 1.0, s2);
    CHECK(Tensor::max_abs_diff(a.images, b.images) == 0.0);
    CHECK(Tensor::max_abs_diff(a.labels, b.labels) == 0.0);
}

TEST_CASE("mixing baselines validate their inputs") {
    const Tensor images = random_images(2, 1, 4, 5);
    MixStreams streams = MixStreams::from_seed(6);
    CHECK_THROWS_AS((void)mixup(images, {0, 1}, 2, 0.0, streams), Error);
    CHECK_THROWS_AS((void)mixup(images, {0}, 2, 1.0, streams), InputError);
    CHECK_THROWS_AS((void)mixup(images, {0, 5}, 2, 1.0, streams), InputError);
    CHECK_THROWS_AS((void)mixup(Tensor({0, 1, 4, 4}), {}, 2, 1.0, streams), InputError);
    CHECK_THROWS_AS((void)cutmix(images, {0, 1}, 1, 1.0, streams), InputError);
    Tensor flat({2, 16});
    CHECK_THROWS_AS((void)cutmix(flat, {0, 1}, 2, 1.0, streams), InputError);
}

TEST_CASE("cutmix on a two-tone fixture: patch pixel counts match the label coefficient") {
    // Sample 0 all zeros (class 0), sample 1 all ones (class 1). Counting
    // bright pixels in each output recovers the pasted area exactly, which
    // must match the partner's label mass.
    const int side = 16;
    Tensor images = Tensor::zeros({2, 1, side, side});
    for (int p = 0; p < side * side; ++p) images[side * side + p] = 1.0;

    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        MixStreams streams = MixStreams::from_seed(seed);
        const MixedBatch out = cutmix(images, {0, 1}, 2, 1.0, streams);
        for (int b = 0; b < 2; ++b) {
            int bright = 0;
            for (int p = 0; p < side * side; ++p)
                if (out.images[static_cast<std::int64_t>(b) * side * side + p] > 0.5) ++bright;
            // Mass on class 1 = fraction of pixels that came from sample 1.
            const double ones_fraction = double(bright) / (side * side);
            CHECK(out.labels.at2(b, 1) == doctest::Approx(ones_fraction).epsilon(1e-12));
            CHECK(out.labels.at2(b, 0) == doctest::Approx(1.0 - ones_fraction).epsilon(1e-12));
        }
    }
}

TEST_CASE("cutmix patches are axis-aligned rectangles") {
    const int side = 12;
    Tensor images = Tensor::zeros({2, 1, side, side});
    for (int p = 0; p < side * side; ++p) images[side * side + p] = 1.0;
    MixStreams streams = MixStreams::from_seed(17);
    const MixedBatch out = cutmix(images, {0, 1}, 2, 1.0, streams);

    // For sample 0 the bright region (if any) must be a full rectangle:
    // bright row extents identical across all bright rows.
    int y_lo = side, y_hi = -1, x_lo = side, x_hi = -1, bright = 0;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            if (out.images[static_cast<std::int64_t>(y) * side + x] > 0.5) {
                ++bright;
                y_lo = std::min(y_lo, y);
                y_hi = std::max(y_hi, y);
                x_lo = std::min(x_lo, x);
                x_hi = std::max(x_hi, x);
            }
    if (bright > 0) CHECK(bright == (y_hi - y_lo + 1) * (x_hi - x_lo + 1));
}

TEST_CASE("cutmix label rows stay on the simplex across alphas") {
    const Tensor images = random_images(8, 3, 10, 7);
    const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
    for (double alpha : {0.2, 1.0, 2.0}) {
        MixStreams streams = MixStreams::from_seed(21);
        const MixedBatch out = cutmix(images, labels, 4, alpha, streams);
        for (int b = 0; b < 8; ++b) {
            Scalar mass = 0;
            for (int c = 0; c < 4; ++c) {
                CHECK(out.labels.at2(b, c) >= 0.0);
                mass += out.labels.at2(b, c);
            }
            CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("iterative_mask_optimizer produces convex per-pixel mixes of the pair") {
    const int B = 4, side = 8;
    const Tensor images = random_images(B, 1, side, /*seed=*/30);
    const std::vector<int> labels = {0, 1, 0, 1};
    const TeacherHandle teacher = tiny_teacher(side, 2, 31);
    MixStreams streams = MixStreams::from_seed(32);
    const MixedBatch out = iterative_mask_optimizer(images, labels, 2, 1.0, 3, teacher, streams);

    REQUIRE(out.images.shape() == images.shape());
    CHECK(out.images.all_finite());
    // Every output pixel lies between the two source pixels (sigmoid masks
    // are in (0,1) and the mix is convex per pixel).
    const Scalar lo = images.min(), hi = images.max();
    CHECK(out.images.min() >= lo - 1e-9);
    CHECK(out.images.max() <= hi + 1e-9);

    for (int b = 0; b < B; ++b) {
        Scalar mass = 0;
        for (int c = 0; c < 2; ++c) mass += out.labels.at2(b, c);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("iterative_mask_optimizer requires at least one step and is deterministic") {
    const Tensor images = random_images(2, 1, 8, 33);
    const TeacherHandle teacher = tiny_teacher(8, 2, 34);
    MixStreams streams = MixStreams::from_seed(35);
    CHECK_THROWS_AS(
        (void)iterative_mask_optimizer(images, {0, 1}, 2, 1.0, 0, teacher, streams),
        InputError);

    MixStreams s1 = MixStreams::from_seed(36);
    MixStreams s2 = MixStreams::from_seed(36);
    const MixedBatch a = iterative_mask_optimizer(images, {0, 1}, 2, 1.0, 2, teacher, s1);
    const MixedBatch b = iterative_mask_optimizer(images, {0, 1}, 2, 1.0, 2, teacher, s2);
    CHECK(Tensor::max_abs_diff(a.images, b.images) == 0.0);
}

TEST_CASE("more optimizer steps reduce the teacher loss on the mixed batch") {
    // The optimizer minimizes teacher soft cross-entropy; with a modest step
    // size, 8 steps should beat 1 step on the same draw.
    const int B = 8, side = 8;
    const Tensor images = random_images(B, 1, side, /*seed=*/40);
    std::vector<int> labels(B);
    for (int i = 0; i < B; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
    const TeacherHandle teacher = tiny_teacher(side, 2, 41);

    auto loss_after = [&](int steps) {
        MixStreams streams = MixStreams::from_seed(42);
        const MixedBatch out =
            iterative_mask_optimizer(images, labels, 2, 1.0, steps, teacher, streams, 0.5);
        const Value logits = teacher.model().forward(make_value(out.images, false), false);
        return soft_cross_entropy_loss(logits, out.labels)->val[0];
    };
    CHECK(loss_after(8) < loss_after(1));
}
