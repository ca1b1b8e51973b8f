#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "mixforge/baselines.hpp"
#include "mixforge/mixer.hpp"
#include "mixforge/models.hpp"
#include "mixforge/training.hpp"
#include "support/fixtures.hpp"

using namespace mixforge;

namespace {

std::shared_ptr<ClassifierModel> toy_model(const Dataset& data, std::uint64_t seed) {
    ArchSpec arch;
    arch.family = "toy-cnn";
    arch.in_channels = data.channels();
    arch.input_w = data.width();
    arch.input_h = data.height();
    arch.num_classes = data.num_classes();
    return std::shared_ptr<ClassifierModel>(build_model(arch, seed));
}

std::vector<Tensor> snapshot_params(ClassifierModel& model) {
    std::vector<Tensor> out;
    for (const NamedTensor& p : model.named_parameters()) out.push_back(p.value->val);
    return out;
}

Scalar max_param_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    REQUIRE(a.size() == b.size());
    Scalar worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, Tensor::max_abs_diff(a[i], b[i]));
    return worst;
}

void zero_all_params(ClassifierModel& model) {
    for (const NamedTensor& p : model.named_parameters()) p.value->val.fill(0);
}

std::vector<int> all_of(const Dataset& d) { return d.all_indices(); }

}  // namespace

TEST_CASE("search config validation rejects out-of-range fields") {
    SearchConfig ok;
    CHECK_NOTHROW(validate_search_config(ok));
    SearchConfig bad = ok;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(validate_search_config(bad), ConfigError);
    bad = ok;
    bad.weight_decay = -1e-3;
    CHECK_THROWS_AS(validate_search_config(bad), ConfigError);
    bad = ok;
    bad.epochs = -1;
    CHECK_THROWS_AS(validate_search_config(bad), ConfigError);
    bad = ok;
    bad.batch_size = 0;
    CHECK_THROWS_AS(validate_search_config(bad), ConfigError);
}

TEST_CASE("task config validation enforces the schedule invariants") {
    TaskConfig ok;
    CHECK_NOTHROW(validate_task_config(ok));

    TaskConfig bad = ok;
    bad.epochs = -1;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.decay_factor = 0;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.momentum = -0.1;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.weight_decay = -1;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.batch_size = 0;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.alpha = 0;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.mix_probability = 1.5;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.mix_probability = -0.1;
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);

    // Decay epochs: strictly increasing, positive, strictly below epochs.
    bad = ok;
    bad.decay_epochs = {0, 5};
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.decay_epochs = {5, 5};
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.decay_epochs = {150, 100};
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.epochs = 10;
    bad.decay_epochs = {10};
    CHECK_THROWS_AS(validate_task_config(bad), ConfigError);
    bad = ok;
    bad.epochs = 10;
    bad.decay_epochs = {3, 7};
    CHECK_NOTHROW(validate_task_config(bad));
}

TEST_CASE("evaluate matches the enumeration oracle on constant logits") {
    // With every parameter zeroed the logits are identically zero, so the
    // ranking is decided purely by the tie-break (lower class index wins).
    fixtures::TempDir dir("eval");
    const Dataset data = fixtures::make_toy_dataset(dir, /*num_classes=*/6, /*per_class=*/3,
                                                    /*side=*/8);
    REQUIRE(data.size() == 18);
    auto model = toy_model(data, 1);
    zero_all_params(*model);

    // All-zero logits: only true class 0 ranks first; classes 0..4 make top-5.
    EvalResult ev = evaluate(*model, data, /*batch_size=*/5, /*want_top5=*/true);
    CHECK(ev.top1 == 3.0 / 18.0);
    CHECK(ev.top5 == 15.0 / 18.0);

    // Put one unit on the class-3 bias: class 3 ranks first everywhere. For a
    // true class y != 3 the rank is 1 + #{ties below y}, so only y = 5 falls
    // out of the top five.
    for (const NamedTensor& p : model->named_parameters())
        if (p.value->val.numel() == 6) p.value->val[3] = 1.0;
    ev = evaluate(*model, data, /*batch_size=*/5, /*want_top5=*/true);
    CHECK(ev.top1 == 3.0 / 18.0);
    CHECK(ev.top5 == 15.0 / 18.0);

    CHECK_THROWS_AS((void)evaluate(*model, data, 0, false), InputError);

    const Dataset two = fixtures::make_toy_dataset(dir, 6, 3, 8, "test");
    CHECK_NOTHROW((void)evaluate(*model, two, 4, true));
    fixtures::TempDir dir2("eval2");
    const Dataset binary = fixtures::make_toy_dataset(dir2, 2, 2, 8);
    CHECK_THROWS_AS((void)evaluate(*model, binary, 4, true), ConfigError);
}

TEST_CASE("task_step on a zeroed model returns the closed-form uniform loss") {
    fixtures::TempDir dir("step");
    const Dataset data = fixtures::make_toy_dataset(dir, /*num_classes=*/4, /*per_class=*/2,
                                                    /*side=*/8);
    auto model = toy_model(data, 2);
    zero_all_params(*model);
    model->set_trainable(true);
    SgdOptimizer opt(model->trainable_parameters(), SgdConfig{0.01, 0.0, 0.0});
    MixStreams streams = MixStreams::from_seed(3);
    const ImageBatch batch = data.batch(all_of(data));

    const double loss = task_step(batch, *model, opt, MixStrategy::kSimple, nullptr, nullptr,
                                  1.0, streams, data.num_classes());
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("the degenerate strategy reproduces plain supervised training exactly") {
    // kDegenerate routes the batch through the full mixing machinery with
    // identity transforms and one-hot masks; the resulting trajectory must be
    // indistinguishable from kSimple.
    fixtures::TempDir dir("degen");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);

    TaskConfig cfg;
    cfg.arch = "toy-cnn";
    cfg.epochs = 2;
    cfg.learning_rate = 0.05;
    cfg.decay_epochs = {};
    cfg.momentum = 0.9;
    cfg.weight_decay = 5e-4;
    cfg.batch_size = 8;
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = true;
    cfg.mix_probability = 1.0;

    auto model_a = toy_model(data, 5);
    model_a->set_trainable(true);
    const RunMetrics ma = train_task(data, nullptr, *model_a, cfg, nullptr, nullptr, 11);

    MixerConfig mc;
    mc.k = 2;
    mc.strategy = MixStrategy::kDegenerate;
    mc.input_w = data.width();
    mc.input_h = data.height();
    MixingModule mixer(mc, 7);

    TaskConfig cfg_d = cfg;
    cfg_d.strategy = MixStrategy::kDegenerate;
    auto model_b = toy_model(data, 5);
    model_b->set_trainable(true);
    const RunMetrics mb = train_task(data, nullptr, *model_b, cfg_d, &mixer, nullptr, 11);

    REQUIRE(ma.epochs.size() == mb.epochs.size());
    for (std::size_t e = 0; e < ma.epochs.size(); ++e)
        CHECK(ma.epochs[e].train_loss == mb.epochs[e].train_loss);
    CHECK(max_param_diff(snapshot_params(*model_a), snapshot_params(*model_b)) == 0.0);
}

TEST_CASE("mix_probability zero turns any mixing strategy into plain training") {
    fixtures::TempDir dir("gate");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);

    TaskConfig cfg;
    cfg.arch = "toy-cnn";
    cfg.epochs = 1;
    cfg.learning_rate = 0.05;
    cfg.decay_epochs = {};
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.batch_size = 8;
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = true;

    auto model_a = toy_model(data, 6);
    model_a->set_trainable(true);
    (void)train_task(data, nullptr, *model_a, cfg, nullptr, nullptr, 13);

    TaskConfig cfg_m = cfg;
    cfg_m.strategy = MixStrategy::kMixup;
    cfg_m.mix_probability = 0.0;  // the gate never fires
    auto model_b = toy_model(data, 6);
    model_b->set_trainable(true);
    (void)train_task(data, nullptr, *model_b, cfg_m, nullptr, nullptr, 13);

    CHECK(max_param_diff(snapshot_params(*model_a), snapshot_params(*model_b)) == 0.0);
}

TEST_CASE("train_mixer updates the mixer but never touches the frozen teacher") {
    fixtures::TempDir dir("frozen");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);
    const TeacherHandle teacher = fixtures::make_toy_teacher(data, /*steps=*/20, /*seed=*/3);
    const std::vector<Tensor> teacher_before = snapshot_params(teacher.model());

    MixerConfig mc;
    mc.k = 2;
    mc.strategy = MixStrategy::kFull;
    mc.input_w = data.width();
    mc.input_h = data.height();
    MixingModule mixer(mc, 9);
    const std::vector<Tensor> mixer_before = [&] {
        std::vector<Tensor> out;
        for (const NamedTensor& p : mixer.named_parameters()) out.push_back(p.value->val);
        return out;
    }();

    SearchConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.weight_decay = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const RunMetrics metrics = train_mixer(data, teacher, mixer, cfg, 17);

    REQUIRE(metrics.epochs.size() == 2);
    for (const EpochMetrics& em : metrics.epochs) {
        CHECK(std::isfinite(em.train_loss));
        CHECK(em.lr == cfg.learning_rate);
        CHECK(em.tau >= mc.tau_min);
        CHECK(std::isnan(em.top1));  // the search stage never evaluates
        CHECK(em.seconds >= 0.0);
    }
    CHECK(metrics.epochs[0].epoch == 0);
    CHECK(metrics.epochs[1].epoch == 1);

    CHECK(max_param_diff(teacher_before, snapshot_params(teacher.model())) == 0.0);

    Scalar moved = 0;
    const std::vector<NamedTensor> after = mixer.named_parameters();
    for (std::size_t i = 0; i < after.size(); ++i)
        moved = std::max(moved, Tensor::max_abs_diff(mixer_before[i], after[i].value->val));
    CHECK(moved > 0.0);
}

TEST_CASE("zero-epoch runs return empty metrics and leave parameters in place") {
    fixtures::TempDir dir("zeroep");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 4, 8);
    auto model = toy_model(data, 4);
    model->set_trainable(true);
    const std::vector<Tensor> before = snapshot_params(*model);

    TaskConfig cfg;
    cfg.epochs = 0;
    cfg.decay_epochs = {};
    cfg.strategy = MixStrategy::kSimple;
    const RunMetrics metrics = train_task(data, nullptr, *model, cfg, nullptr, nullptr, 1);
    CHECK(metrics.epochs.empty());
    CHECK(max_param_diff(before, snapshot_params(*model)) == 0.0);
}

TEST_CASE("the learning-rate schedule decays exactly at the configured epochs") {
    fixtures::TempDir dir("decay");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);
    auto model = toy_model(data, 8);
    model->set_trainable(true);

    TaskConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1e-3;
    cfg.decay_epochs = {2, 4};
    cfg.decay_factor = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.batch_size = 16;
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = false;

    const RunMetrics metrics = train_task(data, nullptr, *model, cfg, nullptr, nullptr, 2);
    REQUIRE(metrics.epochs.size() == 5);
    double expect = cfg.learning_rate;
    for (int e = 0; e < 5; ++e) {
        if (e == 2 || e == 4) expect *= cfg.decay_factor;
        CHECK(metrics.epochs[static_cast<std::size_t>(e)].lr == expect);
    }
}

TEST_CASE("train_task evaluates after every epoch when a test split is given") {
    fixtures::TempDir dir("evalloop");
    const Dataset train = fixtures::make_toy_dataset(dir, 6, 3, 8, "train");
    const Dataset test = fixtures::make_toy_dataset(dir, 6, 3, 8, "test");
    auto model = toy_model(train, 10);
    model->set_trainable(true);

    TaskConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.01;
    cfg.decay_epochs = {};
    cfg.batch_size = 9;
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = false;

    const RunMetrics metrics = train_task(train, &test, *model, cfg, nullptr, nullptr, 3);
    REQUIRE(metrics.epochs.size() == 2);
    for (const EpochMetrics& em : metrics.epochs) {
        CHECK(em.top1 >= 0.0);
        CHECK(em.top1 <= 1.0);
        CHECK(em.top5 >= em.top1);  // six classes: top-5 is reported
        CHECK(em.top5 <= 1.0);
    }
}

TEST_CASE("train_task with two classes reports no top-5 column") {
    fixtures::TempDir dir("notop5");
    const Dataset train = fixtures::make_toy_dataset(dir, 2, 4, 8, "train");
    const Dataset test = fixtures::make_toy_dataset(dir, 2, 4, 8, "test");
    auto model = toy_model(train, 11);
    model->set_trainable(true);

    TaskConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.01;
    cfg.decay_epochs = {};
    cfg.batch_size = 8;
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = false;

    const RunMetrics metrics = train_task(train, &test, *model, cfg, nullptr, nullptr, 4);
    REQUIRE(metrics.epochs.size() == 1);
    CHECK(metrics.epochs[0].top1 >= 0.0);
    CHECK(std::isnan(metrics.epochs[0].top5));
}

TEST_CASE("strategies that need a mixer or teacher fail fast in train_task") {
    fixtures::TempDir dir("needs");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 4, 8);
    auto model = toy_model(data, 12);
    model->set_trainable(true);

    TaskConfig cfg;
    cfg.epochs = 1;
    cfg.decay_epochs = {};
    cfg.strategy = MixStrategy::kFull;
    CHECK_THROWS_AS((void)train_task(data, nullptr, *model, cfg, nullptr, nullptr, 5),
                    ConfigError);

    MixerConfig mc;
    mc.k = 2;
    mc.strategy = MixStrategy::kFull;
    mc.input_w = data.width();
    mc.input_h = data.height();
    MixingModule mixer(mc, 13);
    CHECK_THROWS_AS((void)train_task(data, nullptr, *model, cfg, &mixer, nullptr, 5),
                    ConfigError);
}

TEST_CASE("three consecutive non-finite losses abort with a diagnostics grid") {
    fixtures::TempDir dir("diverge");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);
    auto model = toy_model(data, 14);
    model->set_trainable(true);

    TaskConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 1e200;  // first step launches the weights to overflow
    cfg.decay_epochs = {};
    cfg.momentum = 0.0;
    cfg.batch_size = 4;  // 16 images -> 4 steps: 3 non-finite in a row
    cfg.strategy = MixStrategy::kSimple;
    cfg.augment = false;

    const std::string diag = dir.file("diag");
    CHECK_THROWS_AS((void)train_task(data, nullptr, *model, cfg, nullptr, nullptr, 6, diag),
                    DivergenceError);
    CHECK(std::filesystem::exists(std::filesystem::path(diag) / "task-diverged.png"));
}

TEST_CASE("train_task is deterministic in the run seed") {
    fixtures::TempDir dir("determ");
    const Dataset data = fixtures::make_toy_dataset(dir, 2, 8, 8);

    TaskConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.02;
    cfg.decay_epochs = {};
    cfg.batch_size = 8;
    cfg.strategy = MixStrategy::kMixup;
    cfg.alpha = 1.0;
    cfg.augment = true;
    cfg.mix_probability = 0.5;

    auto run = [&](std::uint64_t seed) {
        auto model = toy_model(data, 15);
        model->set_trainable(true);
        (void)train_task(data, nullptr, *model, cfg, nullptr, nullptr, seed);
        return snapshot_params(*model);
    };
    const std::vector<Tensor> a = run(21);
    const std::vector<Tensor> b = run(21);
    const std::vector<Tensor> c = run(22);
    CHECK(max_param_diff(a, b) == 0.0);
    CHECK(max_param_diff(a, c) > 0.0);
}

TEST_CASE("dump_batch_grid renders non-finite batches and rejects bad ranks") {
    fixtures::TempDir dir("grid");
    Tensor bad({3, 8, 8});
    CHECK_THROWS_AS((void)dump_batch_grid(bad, dir.str(), "x"), InputError);

    Tensor batch({3, 1, 8, 8});
    RngStream rng(1);
    rng.fill_uniform(batch, 0.0, 1.0);
    batch[5] = std::numeric_limits<Scalar>::quiet_NaN();
    batch[9] = std::numeric_limits<Scalar>::infinity();
    const std::string path = dump_batch_grid(batch, dir.str(), "diverged");
    CHECK(std::filesystem::exists(path));
    CHECK(std::filesystem::path(path).filename() == "diverged.png");
    const ImageU8 img = read_image(path);
    CHECK(img.width > 0);
    CHECK(img.height > 0);
}
