#include "mixforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mixforge/errors.hpp"
#include "mixforge/image_io.hpp"

namespace fs = std::filesystem;

namespace mixforge {

namespace {

// One decoded split: u8 pixels in CHW record layout.
struct RawSplit {
    int num_classes = 0;
    int channels = 0, width = 0, height = 0;
    std::vector<unsigned char> data;  // N * C*H*W
    std::vector<int> labels;
};

std::vector<unsigned char> read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void append_cifar_records(RawSplit& out, const std::string& path, int label_bytes,
                          int label_offset) {
    const std::vector<unsigned char> bytes = read_binary(path);
    const std::size_t record = static_cast<std::size_t>(label_bytes) + 3072;
    if (bytes.empty() || bytes.size() % record != 0)
        throw CorruptFileError("CIFAR batch has unexpected size: " + path);
    const std::size_t n = bytes.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        const int label = rec[label_offset];
        if (label >= out.num_classes)
            throw CorruptFileError("CIFAR label outside declared class count: " + path);
        out.labels.push_back(label);
        out.data.insert(out.data.end(), rec + label_bytes, rec + record);
    }
}

RawSplit load_cifar(const std::string& root, const std::string& split, bool cifar100) {
    RawSplit out;
    out.num_classes = cifar100 ? 100 : 10;
    out.channels = 3;
    out.width = 32;
    out.height = 32;
    if (cifar100) {
        // Records: coarse label byte, fine label byte, 3072 pixel bytes.
        const std::string file = split == "train" ? "train.bin" : "test.bin";
        append_cifar_records(out, (fs::path(root) / file).string(), 2, 1);
    } else {
        // Records: label byte, 3072 pixel bytes.
        if (split == "train") {
            for (int i = 1; i <= 5; ++i)
                append_cifar_records(
                    out, (fs::path(root) / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                    1, 0);
        } else {
            append_cifar_records(out, (fs::path(root) / "test_batch.bin").string(), 1, 0);
        }
    }
    return out;
}

RawSplit load_image_folder(const std::string& root, const std::string& split) {
    const fs::path split_dir = fs::path(root) / split;
    const fs::path train_dir = fs::path(root) / "train";
    if (!fs::is_directory(train_dir))
        throw IoError("image-folder dataset lacks a train/ directory: " + root);
    if (!fs::is_directory(split_dir))
        throw IoError("image-folder dataset lacks the requested split: " + split_dir.string());

    // Class ids come from the sorted train-split directory names.
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(train_dir))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw IoError("image-folder train split has no class directories: " + root);

    RawSplit out;
    out.num_classes = static_cast<int>(classes.size());
    for (int ci = 0; ci < out.num_classes; ++ci) {
        const fs::path cdir = split_dir / classes[static_cast<std::size_t>(ci)];
        if (!fs::is_directory(cdir)) continue;
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(cdir))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            const ImageU8 img = read_image(file);
            if (out.channels == 0) {
                out.channels = img.channels;
                out.width = img.width;
                out.height = img.height;
            } else if (img.channels != out.channels || img.width != out.width ||
                       img.height != out.height) {
                throw InputError("image-folder images must share dimensions; offending file: " +
                                 file);
            }
            // Interleaved rows -> CHW record.
            const std::size_t hw = static_cast<std::size_t>(out.height) * out.width;
            const std::size_t base = out.data.size();
            out.data.resize(base + hw * out.channels);
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width; ++x)
                    for (int c = 0; c < out.channels; ++c)
                        out.data[base + static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * out.width + x] =
                            img.pixels[(static_cast<std::size_t>(y) * out.width + x) * out.channels + c];
            out.labels.push_back(ci);
        }
    }
    if (out.labels.empty()) throw IoError("image-folder split is empty: " + split_dir.string());
    return out;
}

RawSplit load_split(const DatasetSpec& spec, const std::string& split) {
    if (split != "train" && split != "test")
        throw ConfigError("dataset split must be train or test, got: " + split);
    if (spec.name == "cifar10") return load_cifar(spec.path, split, false);
    if (spec.name == "cifar100") return load_cifar(spec.path, split, true);
    if (spec.name == "image-folder") return load_image_folder(spec.path, split);
    throw ConfigError("unknown dataset format: " + spec.name);
}

}  // namespace

std::vector<int> stratified_subset(const std::vector<int>& labels, int num_classes,
                                   double fraction, std::uint64_t seed) {
    if (fraction <= 0 || fraction > 1)
        throw ConfigError("subset fraction must lie in (0,1]");
    const int n = static_cast<int>(labels.size());
    if (fraction == 1.0) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
    }

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

    // Largest-remainder quotas per class for a total of round(n * fraction).
    const int total = std::max(1, static_cast<int>(std::lround(n * fraction)));
    std::vector<int> quota(static_cast<std::size_t>(num_classes));
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double exact = static_cast<double>(by_class[static_cast<std::size_t>(c)].size()) * fraction;
        quota[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(exact));
        assigned += quota[static_cast<std::size_t>(c)];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < total - assigned && i < num_classes; ++i) {
        int& q = quota[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)];
        const int avail =
            static_cast<int>(by_class[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)].size());
        q = std::min(q + 1, avail);
    }

    RngStream rng = derive_stream(seed, "subset");
    std::vector<int> picked;
    for (int c = 0; c < num_classes; ++c) {
        auto& members = by_class[static_cast<std::size_t>(c)];
        const std::vector<int> perm = rng.permutation(static_cast<int>(members.size()));
        for (int i = 0; i < quota[static_cast<std::size_t>(c)]; ++i)
            picked.push_back(members[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<int> pair_batch(int batch_size, int k, RngStream& rng) {
    if (batch_size < 1) throw InputError("pair_batch: batch must be non-empty");
    if (k < 1) throw InputError("pair_batch: k must be >= 1");
    std::vector<int> pairs(static_cast<std::size_t>(batch_size) * k);
    for (int b = 0; b < batch_size; ++b) pairs[static_cast<std::size_t>(b) * k] = b;
    for (int i = 1; i < k; ++i) {
        const std::vector<int> perm = rng.permutation(batch_size);
        for (int b = 0; b < batch_size; ++b)
            pairs[static_cast<std::size_t>(b) * k + i] = perm[static_cast<std::size_t>(b)];
    }
    return pairs;
}

Dataset Dataset::load(const DatasetSpec& spec) {
    const RawSplit train = load_split(spec, "train");
    const std::vector<int> train_idx =
        stratified_subset(train.labels, train.num_classes, spec.subset_fraction, spec.seed);

    // Normalization statistics from the (subsetted) train split.
    const std::size_t hw = static_cast<std::size_t>(train.height) * train.width;
    const std::size_t chw = hw * static_cast<std::size_t>(train.channels);
    Tensor mean = Tensor::zeros({train.channels});
    Tensor var = Tensor::zeros({train.channels});
    for (int idx : train_idx) {
        const unsigned char* rec = train.data.data() + static_cast<std::size_t>(idx) * chw;
        for (int c = 0; c < train.channels; ++c) {
            Scalar s = 0, sq = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                const Scalar v = rec[static_cast<std::size_t>(c) * hw + i] / Scalar(255);
                s += v;
                sq += v * v;
            }
            mean[c] += s;
            var[c] += sq;
        }
    }
    const Scalar count = static_cast<Scalar>(train_idx.size()) * static_cast<Scalar>(hw);
    for (int c = 0; c < train.channels; ++c) {
        mean[c] /= count;
        var[c] = std::max(var[c] / count - mean[c] * mean[c], Scalar(0));
    }

    Dataset ds;
    ds.num_classes_ = train.num_classes;
    ds.channels_ = train.channels;
    ds.width_ = train.width;
    ds.height_ = train.height;
    ds.mean_ = mean;
    ds.stddev_ = Tensor({train.channels});
    for (int c = 0; c < train.channels; ++c)
        ds.stddev_[c] = std::max(std::sqrt(var[c]), Scalar(1e-8));

    // Materialize the requested split (train: the subset; test: everything).
    const RawSplit* src = &train;
    RawSplit test;
    std::vector<int> keep = train_idx;
    if (spec.split != "train") {
        test = load_split(spec, spec.split);
        if (test.channels != train.channels || test.width != train.width ||
            test.height != train.height)
            throw CorruptFileError("train/test splits disagree on image dimensions");
        src = &test;
        keep.resize(static_cast<std::size_t>(test.labels.size()));
        std::iota(keep.begin(), keep.end(), 0);
    }
    const int n = static_cast<int>(keep.size());
    ds.images_ = Tensor({n, ds.channels_, ds.height_, ds.width_});
    ds.labels_.reserve(static_cast<std::size_t>(n));
    for (int row = 0; row < n; ++row) {
        const int idx = keep[static_cast<std::size_t>(row)];
        const unsigned char* rec = src->data.data() + static_cast<std::size_t>(idx) * chw;
        Scalar* dst = ds.images_.data() + static_cast<std::int64_t>(row) * static_cast<std::int64_t>(chw);
        for (std::size_t i = 0; i < chw; ++i) dst[i] = rec[i] / Scalar(255);
        ds.labels_.push_back(src->labels[static_cast<std::size_t>(idx)]);
    }
    return ds;
}

Tensor Dataset::raw_image(int index) const {
    if (index < 0 || index >= size()) throw InputError("raw_image: index out of range");
    Tensor out({channels_, height_, width_});
    const std::int64_t chw = out.numel();
    std::memcpy(out.data(), images_.data() + static_cast<std::int64_t>(index) * chw,
                static_cast<std::size_t>(chw) * sizeof(Scalar));
    return out;
}

ImageBatch Dataset::batch(const std::vector<int>& indices, bool augment,
                          RngStream* aug_rng) const {
    if (augment && aug_rng == nullptr)
        throw InternalError("Dataset::batch: augmentation requires an RNG stream");
    const int B = static_cast<int>(indices.size());
    if (B == 0) throw InputError("Dataset::batch: empty index list");
    ImageBatch out;
    out.images = Tensor({B, channels_, height_, width_});
    out.labels.reserve(static_cast<std::size_t>(B));
    const std::int64_t chw = static_cast<std::int64_t>(channels_) * height_ * width_;
    constexpr int kPad = 4;

    for (int b = 0; b < B; ++b) {
        const int idx = indices[static_cast<std::size_t>(b)];
        if (idx < 0 || idx >= size()) throw InputError("Dataset::batch: index out of range");
        const Scalar* src = images_.data() + static_cast<std::int64_t>(idx) * chw;
        Scalar* dst = out.images.data() + static_cast<std::int64_t>(b) * chw;

        int dy = 0, dx = 0;
        bool flip = false;
        if (augment) {
            // 4-pixel zero padding, random crop back to size, horizontal flip.
            dy = static_cast<int>(aug_rng->index(2 * kPad + 1)) - kPad;
            dx = static_cast<int>(aug_rng->index(2 * kPad + 1)) - kPad;
            flip = aug_rng->bernoulli(0.5);
        }
        for (int c = 0; c < channels_; ++c) {
            const Scalar mu = mean_[c], inv = 1 / stddev_[c];
            const Scalar pad = (0 - mu) * inv;
            for (int y = 0; y < height_; ++y) {
                const int sy = y + dy;
                for (int x = 0; x < width_; ++x) {
                    const int sx = (flip ? width_ - 1 - x : x) + dx;
                    Scalar v;
                    if (sy < 0 || sy >= height_ || sx < 0 || sx >= width_)
                        v = pad;
                    else
                        v = (src[(static_cast<std::int64_t>(c) * height_ + sy) * width_ + sx] - mu) * inv;
                    dst[(static_cast<std::int64_t>(c) * height_ + y) * width_ + x] = v;
                }
            }
        }
        out.labels.push_back(labels_[static_cast<std::size_t>(idx)]);
    }
    return out;
}

std::vector<int> Dataset::all_indices() const {
    std::vector<int> idx(static_cast<std::size_t>(size()));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
    if (num_classes < 1) throw InputError("one_hot: num_classes must be >= 1");
    Tensor out({static_cast<int>(labels.size()), num_classes});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const int y = labels[b];
        if (y < 0 || y >= num_classes) throw InputError("one_hot: label out of range");
        out[static_cast<std::int64_t>(b) * num_classes + y] = 1.0;
    }
    return out;
}

}  // namespace mixforge
