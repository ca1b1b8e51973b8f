#include "mixforge/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "mixforge/autodiff.hpp"
#include "mixforge/baselines.hpp"
#include "mixforge/errors.hpp"
#include "mixforge/image_io.hpp"

namespace mixforge {

namespace {

constexpr int kDivergenceLimit = 3;  // consecutive non-finite losses before aborting

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, RngStream& shuffle) {
    const std::vector<int> perm = shuffle.permutation(n);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int stop = std::min(n, start + batch_size);
        batches.emplace_back(perm.begin() + start, perm.begin() + stop);
    }
    return batches;
}

[[noreturn]] void abort_diverged(const char* stage, int epoch, const Tensor& last_mixed,
                                 const std::string& diagnostics_dir) {
    std::string note;
    if (!diagnostics_dir.empty() && last_mixed.numel() > 0)
        note = "; mixed-batch grid at " +
               dump_batch_grid(last_mixed, diagnostics_dir, std::string(stage) + "-diverged");
    throw DivergenceError(std::string(stage) + ": loss non-finite for " +
                          std::to_string(kDivergenceLimit) + " consecutive steps at epoch " +
                          std::to_string(epoch) + note);
}

}  // namespace

void validate_search_config(const SearchConfig& cfg) {
    if (!(cfg.learning_rate > 0)) throw ConfigError("search: learning-rate must be positive");
    if (cfg.weight_decay < 0) throw ConfigError("search: weight-decay must be non-negative");
    if (cfg.epochs < 0) throw ConfigError("search: epochs must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("search: batch-size must be positive");
}

void validate_task_config(const TaskConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("task: epochs must be non-negative");
    if (!(cfg.learning_rate > 0)) throw ConfigError("task: learning-rate must be positive");
    if (!(cfg.decay_factor > 0)) throw ConfigError("task: decay factor must be positive");
    if (cfg.momentum < 0 || cfg.momentum >= 1) throw ConfigError("task: momentum must be in [0,1)");
    if (cfg.weight_decay < 0) throw ConfigError("task: weight-decay must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("task: batch-size must be positive");
    if (!(cfg.alpha > 0)) throw ConfigError("task: alpha must be positive");
    if (cfg.mix_probability < 0 || cfg.mix_probability > 1)
        throw ConfigError("task: mix-probability must be in [0,1]");
    int prev = 0;
    for (int d : cfg.decay_epochs) {
        if (d <= prev) throw ConfigError("task: decay epochs must be positive and strictly increasing");
        if (d >= cfg.epochs) throw ConfigError("task: decay epochs must be below total epochs");
        prev = d;
    }
}

EvalResult evaluate(ClassifierModel& model, const Dataset& dataset, int batch_size,
                    bool want_top5) {
    const int num_classes = dataset.num_classes();
    if (want_top5 && num_classes < 5)
        throw ConfigError("evaluate: top-5 needs at least 5 classes");
    if (batch_size < 1) throw InputError("evaluate: batch-size must be positive");

    const std::vector<int> all = dataset.all_indices();
    std::int64_t hit1 = 0, hit5 = 0;
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(all.size(), start + static_cast<std::size_t>(batch_size));
        const std::vector<int> idx(all.begin() + static_cast<std::ptrdiff_t>(start),
                                   all.begin() + static_cast<std::ptrdiff_t>(stop));
        const ImageBatch b = dataset.batch(idx);
        const Value logits = model.forward(make_value(b.images, false), /*training=*/false);
        const Tensor& z = logits->val;
        for (std::int64_t r = 0; r < z.dim(0); ++r) {
            const int y = b.labels[static_cast<std::size_t>(r)];
            const Scalar* row = z.data() + r * num_classes;
            // Rank of the true class under (logit desc, index asc).
            int better = 0;
            for (int c = 0; c < num_classes; ++c)
                if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++better;
            if (better == 0) ++hit1;
            if (better < 5) ++hit5;
        }
    }
    EvalResult res;
    res.top1 = static_cast<double>(hit1) / static_cast<double>(all.size());
    if (want_top5) res.top5 = static_cast<double>(hit5) / static_cast<double>(all.size());
    return res;
}

double search_step(const ImageBatch& batch, const TeacherHandle& teacher, MixingModule& mixer,
                   SgdOptimizer& optimizer, MixStreams& streams, int num_classes,
                   Tensor* last_mixed) {
    optimizer.zero_grad();
    MixedBatchValue mixed = mixer.mix_batch(batch.images, batch.labels, num_classes, &teacher,
                                            streams);
    const Value logits = teacher.model().forward(mixed.images, /*training=*/false);
    const Value loss = soft_cross_entropy_loss(logits, mixed.labels);
    if (last_mixed) *last_mixed = mixed.images->val;
    const double value = loss->val[0];
    if (std::isfinite(value)) {
        backward(loss);
        optimizer.step();
        mixer.clamp_tau();
    }
    return value;
}

double task_step(const ImageBatch& batch, ClassifierModel& model, SgdOptimizer& optimizer,
                 MixStrategy strategy, MixingModule* mixer, const TeacherHandle* teacher,
                 double alpha, MixStreams& streams, int num_classes, Tensor* last_mixed) {
    optimizer.zero_grad();
    Value x;
    Tensor y;
    switch (strategy) {
        case MixStrategy::kSimple:
            x = make_value(batch.images, false);
            y = one_hot(batch.labels, num_classes);
            break;
        case MixStrategy::kMixup: {
            MixedBatch mb = mixup(batch.images, batch.labels, num_classes, alpha, streams);
            x = make_value(mb.images, false);
            y = std::move(mb.labels);
            break;
        }
        case MixStrategy::kCutmix: {
            MixedBatch mb = cutmix(batch.images, batch.labels, num_classes, alpha, streams);
            x = make_value(mb.images, false);
            y = std::move(mb.labels);
            break;
        }
        default: {
            if (!mixer)
                throw ConfigError("task_step: strategy " + strategy_name(strategy) +
                                  " needs a mixer");
            if (strategy_needs_teacher(strategy) && !teacher)
                throw ConfigError("task_step: strategy " + strategy_name(strategy) +
                                  " needs a teacher");
            MixedBatchValue mb = mixer->mix_batch(batch.images, batch.labels, num_classes,
                                                  teacher, streams);
            x = mb.images;
            y = std::move(mb.labels);
            break;
        }
    }
    const Value logits = model.forward(x, /*training=*/true);
    const Value loss = soft_cross_entropy_loss(logits, y);
    if (last_mixed) *last_mixed = x->val;
    const double value = loss->val[0];
    if (std::isfinite(value)) {
        backward(loss);
        optimizer.step();
    }
    return value;
}

RunMetrics train_mixer(const Dataset& train, const TeacherHandle& teacher, MixingModule& mixer,
                       const SearchConfig& cfg, std::uint64_t run_seed,
                       const std::string& diagnostics_dir, const EpochCallback& on_epoch) {
    validate_search_config(cfg);
    mixer.set_trainable(true);
    SgdOptimizer optimizer(mixer.trainable_parameters(),
                           SgdConfig{cfg.learning_rate, 0.0, cfg.weight_decay});
    MixStreams streams = MixStreams::from_seed(run_seed);
    RngStream shuffle = derive_stream(run_seed, "shuffle");

    RunMetrics metrics;
    int consecutive_bad = 0;
    Tensor last_mixed;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0;
        int steps = 0;
        for (const std::vector<int>& idx : epoch_batches(train.size(), cfg.batch_size, shuffle)) {
            const ImageBatch b = train.batch(idx);
            const double loss = search_step(b, teacher, mixer, optimizer, streams,
                                            train.num_classes(), &last_mixed);
            if (!std::isfinite(loss)) {
                if (++consecutive_bad >= kDivergenceLimit)
                    abort_diverged("search", epoch, last_mixed, diagnostics_dir);
            } else {
                consecutive_bad = 0;
            }
            loss_sum += loss;
            ++steps;
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / steps;
        em.seconds = seconds_since(t0);
        em.tau = mixer.tau();
        em.lr = cfg.learning_rate;
        metrics.epochs.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return metrics;
}

RunMetrics train_task(const Dataset& train, const Dataset* test, ClassifierModel& model,
                      const TaskConfig& cfg, MixingModule* mixer, const TeacherHandle* teacher,
                      std::uint64_t run_seed, const std::string& diagnostics_dir,
                      const EpochCallback& on_epoch) {
    validate_task_config(cfg);
    if (strategy_needs_mixer(cfg.strategy) && !mixer)
        throw ConfigError("train_task: strategy " + strategy_name(cfg.strategy) +
                          " needs a mixer checkpoint");
    if (strategy_needs_teacher(cfg.strategy) && !teacher)
        throw ConfigError("train_task: strategy " + strategy_name(cfg.strategy) +
                          " needs a teacher checkpoint");
    if (mixer) mixer->set_trainable(false);

    SgdOptimizer optimizer(model.trainable_parameters(),
                           SgdConfig{cfg.learning_rate, cfg.momentum, cfg.weight_decay});
    MixStreams streams = MixStreams::from_seed(run_seed);
    RngStream shuffle = derive_stream(run_seed, "shuffle");
    RngStream aug = derive_stream(run_seed, "aug");
    RngStream gate = derive_stream(run_seed, "mixgate");

    const bool want_top5 = test && test->num_classes() >= 5;
    double lr = cfg.learning_rate;
    std::size_t next_decay = 0;

    RunMetrics metrics;
    int consecutive_bad = 0;
    Tensor last_mixed;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (next_decay < cfg.decay_epochs.size() && epoch == cfg.decay_epochs[next_decay]) {
            lr *= cfg.decay_factor;
            ++next_decay;
        }
        optimizer.set_lr(lr);

        double loss_sum = 0;
        int steps = 0;
        for (const std::vector<int>& idx : epoch_batches(train.size(), cfg.batch_size, shuffle)) {
            const ImageBatch b = train.batch(idx, cfg.augment, cfg.augment ? &aug : nullptr);
            MixStrategy s = cfg.strategy;
            if (cfg.mix_probability < 1.0 && s != MixStrategy::kSimple &&
                !gate.bernoulli(cfg.mix_probability))
                s = MixStrategy::kSimple;
            const double loss = task_step(b, model, optimizer, s, mixer, teacher, cfg.alpha,
                                          streams, train.num_classes(), &last_mixed);
            if (!std::isfinite(loss)) {
                if (++consecutive_bad >= kDivergenceLimit)
                    abort_diverged("task", epoch, last_mixed, diagnostics_dir);
            } else {
                consecutive_bad = 0;
            }
            loss_sum += loss;
            ++steps;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / steps;
        em.seconds = seconds_since(t0);
        em.lr = lr;
        if (test) {
            const EvalResult ev = evaluate(model, *test, cfg.batch_size, want_top5);
            em.top1 = ev.top1;
            em.top5 = ev.top5;
        }
        metrics.epochs.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return metrics;
}

std::string dump_batch_grid(const Tensor& images, const std::string& dir,
                            const std::string& stem) {
    if (images.rank() != 4) throw InputError("dump_batch_grid: expected (B,C,H,W)");
    std::filesystem::create_directories(dir);
    const int b_n = static_cast<int>(images.dim(0));
    const int c_n = static_cast<int>(images.dim(1));
    const int h = static_cast<int>(images.dim(2));
    const int w = static_cast<int>(images.dim(3));
    const std::int64_t plane = static_cast<std::int64_t>(c_n) * h * w;
    std::vector<Tensor> tiles;
    tiles.reserve(static_cast<std::size_t>(b_n));
    for (int b = 0; b < b_n; ++b) {
        Tensor tile({c_n, h, w});
        std::copy_n(images.data() + b * plane, plane, tile.data());
        // A diverged batch may hold non-finite pixels; blank them so the
        // rest of the image still renders.
        for (std::int64_t i = 0; i < tile.numel(); ++i)
            if (!std::isfinite(tile[i])) tile[i] = 0;
        tiles.push_back(normalize_map(tile));
    }
    const std::string path = (std::filesystem::path(dir) / (stem + ".png")).string();
    write_png_grid(path, tiles, std::min(b_n, 8));
    return path;
}

}  // namespace mixforge
