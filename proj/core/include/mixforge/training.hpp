#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mixforge/data.hpp"
#include "mixforge/mixer.hpp"
#include "mixforge/models.hpp"
#include "mixforge/nn.hpp"
#include "mixforge/saliency.hpp"

namespace mixforge {

// Search stage: plain SGD over f_s, f_m and log tau.
struct SearchConfig {
    double learning_rate = 5e-4;
    double weight_decay = 1e-2;
    int epochs = 100;
    int batch_size = 128;
};

// Task stage: momentum-SGD with a step schedule.
struct TaskConfig {
    std::string arch = "resnet-18";
    int epochs = 200;
    double learning_rate = 0.1;
    std::vector<int> decay_epochs = {100, 150};
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 128;
    MixStrategy strategy = MixStrategy::kSimple;
    double alpha = 1.0;            // Beta/Dirichlet parameter for mixup/cutmix
    bool augment = true;           // standard 4-px crop + horizontal flip
    double mix_probability = 1.0;  // <1 gates mixing per batch (sweep knob)
};

// Throws ConfigError unless decay epochs are strictly increasing, positive
// and below `epochs`, and the scalar fields are in range.
void validate_task_config(const TaskConfig& cfg);
void validate_search_config(const SearchConfig& cfg);

struct EpochMetrics {
    int epoch = 0;          // 0-based
    double train_loss = 0;  // mean over the epoch's steps
    double top1 = std::numeric_limits<double>::quiet_NaN();
    double top5 = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0;  // wall clock for the epoch
    double tau = std::numeric_limits<double>::quiet_NaN();
    double lr = std::numeric_limits<double>::quiet_NaN();
};

struct RunMetrics {
    std::vector<EpochMetrics> epochs;
};

struct EvalResult {
    double top1 = 0;
    double top5 = std::numeric_limits<double>::quiet_NaN();
};

// Accuracy over the whole dataset, eval mode, no augmentation. Ties in the
// logit ranking break toward the lower class index. Requesting top-5 on a
// dataset with fewer than 5 classes is a ConfigError.
EvalResult evaluate(ClassifierModel& model, const Dataset& dataset, int batch_size,
                    bool want_top5);

// One search-stage update: mix the batch with the mixer's own strategy,
// score the result with the frozen teacher, and step the mixer parameters.
// Gradients from this step are left in place for inspection. Returns the
// loss; `last_mixed` (optional) receives the mixed images for diagnostics.
double search_step(const ImageBatch& batch, const TeacherHandle& teacher, MixingModule& mixer,
                   SgdOptimizer& optimizer, MixStreams& streams, int num_classes,
                   Tensor* last_mixed = nullptr);

// One task-stage update on `model` with the batch mixed per `strategy`.
// `mixer`/`teacher` may be null for strategies that do not need them.
double task_step(const ImageBatch& batch, ClassifierModel& model, SgdOptimizer& optimizer,
                 MixStrategy strategy, MixingModule* mixer, const TeacherHandle* teacher,
                 double alpha, MixStreams& streams, int num_classes,
                 Tensor* last_mixed = nullptr);

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Search stage over the train split: shuffled batches, plain SGD, learned
// tau logged per epoch. Mutates `mixer` in place. On three consecutive
// non-finite losses, dumps the last mixed batch to `diagnostics_dir` (when
// given) and throws DivergenceError.
RunMetrics train_mixer(const Dataset& train, const TeacherHandle& teacher, MixingModule& mixer,
                       const SearchConfig& cfg, std::uint64_t run_seed,
                       const std::string& diagnostics_dir = "",
                       const EpochCallback& on_epoch = {});

// Task stage: epoch loop with the configured schedule, evaluating on
// `test` (when given) after every epoch. The mixer is frozen for the whole
// run. Divergence handling as in train_mixer.
RunMetrics train_task(const Dataset& train, const Dataset* test, ClassifierModel& model,
                      const TaskConfig& cfg, MixingModule* mixer, const TeacherHandle* teacher,
                      std::uint64_t run_seed, const std::string& diagnostics_dir = "",
                      const EpochCallback& on_epoch = {});

// Postmortem grid of a diverged batch: each image min-max normalized on
// its own. Returns the written path.
std::string dump_batch_grid(const Tensor& images, const std::string& dir,
                            const std::string& stem);

}  // namespace mixforge
