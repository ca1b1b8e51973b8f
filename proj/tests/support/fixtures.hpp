// Test fixtures: disposable directories, synthetic datasets in the on-disk
// formats the loaders read, and small pre-trained models for pipeline tests.
#pragma once

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "mixforge/data.hpp"
#include "mixforge/errors.hpp"
#include "mixforge/image_io.hpp"
#include "mixforge/models.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/saliency.hpp"
#include "mixforge/training.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Unique directory under the system temp root, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        const fs::path base = fs::temp_directory_path() / "mixforge-tests";
        fs::create_directories(base);
        path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    fs::path path_;
};

// A learnable synthetic image: a bright square whose position depends on the
// class, over uniform noise. Interleaved 8-bit rows.
inline mixforge::ImageU8 class_pattern_image(int cls, int num_classes, int w, int h,
                                             int channels, mixforge::RngStream& rng) {
    mixforge::ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(w) * h * channels);
    for (auto& p : img.pixels) p = static_cast<unsigned char>(rng.index(96));
    // Class c brightens a quadrant-ish block anchored along the diagonal.
    const int block = std::max(2, w / 2);
    const int max_off_x = std::max(1, w - block);
    const int max_off_y = std::max(1, h - block);
    const int ox = num_classes > 1 ? (cls * max_off_x) / (num_classes - 1) : 0;
    const int oy = num_classes > 1 ? (cls * max_off_y) / (num_classes - 1) : 0;
    for (int y = oy; y < std::min(h, oy + block); ++y)
        for (int x = ox; x < std::min(w, ox + block); ++x)
            for (int c = 0; c < channels; ++c) {
                auto& p = img.pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
                p = static_cast<unsigned char>(std::min(255, p + 150 + (c == cls % channels ? 40 : 0)));
            }
    return img;
}

// CIFAR-10 binary layout: five train batches and one test batch of
// (1 label byte + 3072 CHW pixel bytes) records.
inline void write_cifar10_fixture(const fs::path& dir, int per_train_batch, int test_n,
                                  std::uint64_t seed = 0) {
    fs::create_directories(dir);
    mixforge::RngStream rng(seed);
    auto write_batch = [&](const std::string& name, int n) {
        std::ofstream out(dir / name, std::ios::binary);
        for (int i = 0; i < n; ++i) {
            const int cls = i % 10;
            out.put(static_cast<char>(cls));
            const mixforge::ImageU8 img = class_pattern_image(cls, 10, 32, 32, 3, rng);
            // Interleaved rows -> planar CHW record.
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 32; ++y)
                    for (int x = 0; x < 32; ++x)
                        out.put(static_cast<char>(
                            img.pixels[(static_cast<std::size_t>(y) * 32 + x) * 3 + c]));
        }
    };
    for (int b = 1; b <= 5; ++b) write_batch("data_batch_" + std::to_string(b) + ".bin", per_train_batch);
    write_batch("test_batch.bin", test_n);
}

// image-folder layout: <root>/<split>/<class>/<file>.png, classes named so
// their sorted order is the label order.
inline void write_image_folder_fixture(const fs::path& root, int num_classes,
                                       int per_class_train, int per_class_test, int w, int h,
                                       int channels = 3, std::uint64_t seed = 0) {
    mixforge::RngStream rng(seed);
    auto write_split = [&](const std::string& split, int per_class) {
        for (int cls = 0; cls < num_classes; ++cls) {
            const fs::path cdir = root / split / ("class" + std::to_string(cls));
            fs::create_directories(cdir);
            for (int i = 0; i < per_class; ++i) {
                const mixforge::ImageU8 img =
                    class_pattern_image(cls, num_classes, w, h, channels, rng);
                char name[32];
                std::snprintf(name, sizeof(name), "img%03d.png", i);
                mixforge::write_png((cdir / name).string(), img);
            }
        }
    };
    write_split("train", per_class_train);
    if (per_class_test > 0) write_split("test", per_class_test);
}

// A tiny image-folder dataset loaded back through the standard loader.
// 2 classes by default; `side` pixels square.
inline mixforge::Dataset make_toy_dataset(const TempDir& dir, int num_classes = 2,
                                          int per_class = 16, int side = 16,
                                          const std::string& split = "train",
                                          std::uint64_t seed = 0) {
    const fs::path root = dir.path() / "toy-data";
    if (!fs::exists(root / "train"))
        write_image_folder_fixture(root, num_classes, per_class, std::max(per_class / 2, 2),
                                   side, side, 3, seed);
    mixforge::DatasetSpec spec;
    spec.name = "image-folder";
    spec.path = root.string();
    spec.split = split;
    return mixforge::Dataset::load(spec);
}

// A toy-cnn teacher for the dataset, briefly trained so its CAMs and loss
// surface reflect the data. `steps` plain SGD steps on one shuffled pass.
inline mixforge::TeacherHandle make_toy_teacher(const mixforge::Dataset& data, int steps = 40,
                                                std::uint64_t seed = 0) {
    mixforge::ArchSpec arch;
    arch.family = "toy-cnn";
    arch.in_channels = data.channels();
    arch.input_w = data.width();
    arch.input_h = data.height();
    arch.num_classes = data.num_classes();
    std::shared_ptr<mixforge::ClassifierModel> model = mixforge::build_model(arch, seed);
    model->set_trainable(true);
    mixforge::SgdOptimizer opt(model->trainable_parameters(), {0.05, 0.9, 0.0});
    mixforge::RngStream shuffle = mixforge::derive_stream(seed, "fixture-teacher");
    const int batch = std::min(16, data.size());
    for (int s = 0; s < steps; ++s) {
        std::vector<int> idx(static_cast<std::size_t>(batch));
        for (auto& i : idx) i = static_cast<int>(shuffle.index(data.size()));
        const mixforge::ImageBatch xb = data.batch(idx);
        opt.zero_grad();
        mixforge::Value logits =
            model->forward(mixforge::make_value(xb.images, false), true);
        mixforge::Value loss = mixforge::soft_cross_entropy_loss(
            logits, mixforge::one_hot(xb.labels, data.num_classes()));
        mixforge::backward(loss);
        opt.step();
    }
    model->set_trainable(false);
    return mixforge::TeacherHandle(std::move(model));
}

}  // namespace fixtures
