#include <benchmark/benchmark.h>

#include "mixforge/autodiff.hpp"
#include "mixforge/baselines.hpp"
#include "mixforge/mixer.hpp"
#include "mixforge/models.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/saliency.hpp"

namespace {

using namespace mixforge;

Tensor random_images(int b, int c, int side, std::uint64_t seed) {
    Tensor t({b, c, side, side});
    RngStream rng = derive_stream(seed, "bench-data");
    rng.fill_uniform(t, 0.0, 1.0);
    return t;
}

std::vector<int> random_labels(int b, int classes, std::uint64_t seed) {
    RngStream rng = derive_stream(seed, "bench-labels");
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (int& l : labels) l = static_cast<int>(rng.index(classes));
    return labels;
}

TeacherHandle make_teacher(int side) {
    ArchSpec spec;
    spec.family = "toy-cnn";
    spec.in_channels = 3;
    spec.input_w = side;
    spec.input_h = side;
    spec.num_classes = 10;
    return TeacherHandle(std::shared_ptr<ClassifierModel>(build_model(spec, 0)));
}

MixerConfig mixer_config(int side) {
    MixerConfig cfg;
    cfg.input_w = side;
    cfg.input_h = side;
    cfg.strategy = MixStrategy::kFull;
    return cfg;
}

void BM_WarpForward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int b = 16;
    const Value x = make_value(random_images(b, 3, side, 1), false);
    Tensor th({b, 2, 3});
    for (int i = 0; i < b; ++i) {
        th.at3(i, 0, 0) = 0.9;
        th.at3(i, 1, 1) = 0.9;
        th.at3(i, 0, 2) = 0.05;
    }
    const Value theta = make_value(th, false);
    for (auto _ : state) {
        benchmark::DoNotOptimize(grid_sample_affine(x, theta, WarpPadding::kZeros));
    }
    state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_WarpForward)->Arg(32)->Arg(64);

void BM_WarpBackward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int b = 16;
    const Tensor img = random_images(b, 3, side, 2);
    Tensor th({b, 2, 3});
    for (int i = 0; i < b; ++i) {
        th.at3(i, 0, 0) = 0.9;
        th.at3(i, 1, 1) = 0.9;
    }
    for (auto _ : state) {
        Value x = make_leaf(img);
        Value theta = make_leaf(th);
        Value w = grid_sample_affine(x, theta, WarpPadding::kZeros);
        backward(mean_all(w));
        benchmark::DoNotOptimize(theta->grad.data());
    }
    state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_WarpBackward)->Arg(32);

void BM_MixBatch(benchmark::State& state) {
    const int side = 32;
    const int b = static_cast<int>(state.range(0));
    const TeacherHandle teacher = make_teacher(side);
    MixingModule mixer(mixer_config(side), 0);
    mixer.set_trainable(false);
    const Tensor images = random_images(b, 3, side, 3);
    const std::vector<int> labels = random_labels(b, 10, 3);
    MixStreams streams = MixStreams::from_seed(7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mixer.mix_batch(images, labels, 10, &teacher, streams));
    }
    state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_MixBatch)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_IterativeMask(benchmark::State& state) {
    const int side = 32;
    const int b = 16;
    const int steps = static_cast<int>(state.range(0));
    const TeacherHandle teacher = make_teacher(side);
    const Tensor images = random_images(b, 3, side, 4);
    const std::vector<int> labels = random_labels(b, 10, 4);
    MixStreams streams = MixStreams::from_seed(11);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            iterative_mask_optimizer(images, labels, 10, 1.0, steps, teacher, streams));
    }
    state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_IterativeMask)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
