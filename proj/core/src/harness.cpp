#include "mixforge/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mixforge/baselines.hpp"
#include "mixforge/errors.hpp"
#include "mixforge/image_io.hpp"
#include "mixforge/saliency.hpp"

namespace fs = std::filesystem;

namespace mixforge {

namespace {

constexpr const char* kMetricsSchema = "mixforge.metrics.v1";
constexpr const char* kResultsSchema = "mixforge.results.v1";
constexpr const char* kSummarySchema = "mixforge.summary.v1";
constexpr const char* kTimingSchema = "mixforge.timing.v1";

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out.flush()) throw IoError("short write to " + path);
}

std::string csv_field(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct Agg {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    int n = 0;
};

Agg aggregate(const std::vector<double>& values) {
    Agg a;
    std::vector<double> finite;
    for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
    a.n = static_cast<int>(finite.size());
    if (finite.empty()) return a;
    a.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / a.n;
    if (a.n > 1) {
        double ss = 0;
        for (double v : finite) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / (a.n - 1));
    } else {
        a.stddev = 0;
    }
    return a;
}

Json agg_json(const std::vector<double>& values) {
    const Agg a = aggregate(values);
    if (a.n == 0) return nullptr;
    return Json{{"mean", a.mean}, {"stddev", a.stddev}, {"n", a.n}};
}

Dataset load_split(const ExperimentConfig& cfg, const std::string& split) {
    if (cfg.dataset.name.empty() || cfg.dataset.path.empty())
        throw ConfigError("config needs [dataset] name and path");
    DatasetSpec spec = cfg.dataset;
    spec.split = split;
    return Dataset::load(spec);
}

ArchSpec arch_for(const std::string& family, const Dataset& ds) {
    ArchSpec spec;
    spec.family = family;
    spec.in_channels = ds.channels();
    spec.input_w = ds.width();
    spec.input_h = ds.height();
    spec.num_classes = ds.num_classes();
    return spec;
}

void require_artifact(const std::string& path, const std::string& what,
                      const std::string& config_key) {
    if (path.empty())
        throw DependencyError("this command needs a " + what + "; set " + config_key);
    if (!fs::exists(path))
        throw DependencyError(what + " not found at '" + path + "'; set " + config_key);
}

TeacherHandle load_teacher(const std::string& path) {
    std::unique_ptr<ClassifierModel> model = load_model_checkpoint(path);
    return TeacherHandle(std::shared_ptr<ClassifierModel>(std::move(model)));
}

void check_teacher_matches(const TeacherHandle& teacher, const Dataset& ds) {
    const ArchSpec& s = teacher.model().spec();
    if (s.in_channels != ds.channels() || s.input_w != ds.width() || s.input_h != ds.height() ||
        s.num_classes != ds.num_classes())
        throw ConfigError("teacher checkpoint was trained for " + std::to_string(s.in_channels) +
                          "x" + std::to_string(s.input_w) + "x" + std::to_string(s.input_h) + "/" +
                          std::to_string(s.num_classes) + " classes; dataset is " +
                          std::to_string(ds.channels()) + "x" + std::to_string(ds.width()) + "x" +
                          std::to_string(ds.height()) + "/" + std::to_string(ds.num_classes()));
}

void check_declared_k(const ExperimentConfig& cfg, const MixingModule& mixer) {
    if (cfg.declared_k && *cfg.declared_k != mixer.config().k)
        throw ConfigError("mixer checkpoint has k=" + std::to_string(mixer.config().k) +
                          " but the config declares mixer.k=" + std::to_string(*cfg.declared_k));
}

std::string seed_dir(const std::string& base, std::uint64_t seed) {
    const std::string dir = base + "/seed-" + std::to_string(seed);
    fs::create_directories(dir);
    return dir;
}

Json finals_json(const RunMetrics& metrics) {
    if (metrics.epochs.empty()) return Json::object();
    const EpochMetrics& last = metrics.epochs.back();
    Json j{{"epochs", metrics.epochs.size()}, {"train_loss", last.train_loss}};
    j["top1"] = std::isnan(last.top1) ? Json(nullptr) : Json(last.top1);
    j["top5"] = std::isnan(last.top5) ? Json(nullptr) : Json(last.top5);
    j["tau"] = std::isnan(last.tau) ? Json(nullptr) : Json(last.tau);
    double total = 0;
    for (const EpochMetrics& e : metrics.epochs) total += e.seconds;
    j["seconds_total"] = total;
    return j;
}

// --- grid tiles ------------------------------------------------------------

Tensor slice_sample(const Tensor& batch, int b) {
    Tensor tile({static_cast<int>(batch.dim(1)), static_cast<int>(batch.dim(2)),
                 static_cast<int>(batch.dim(3))});
    const std::int64_t plane = tile.numel();
    std::copy_n(batch.data() + b * plane, plane, tile.data());
    return tile;
}

// Undo per-channel normalization for display.
Tensor denormalize(const Tensor& chw, const Tensor& mean, const Tensor& stddev) {
    Tensor out = chw;
    const std::int64_t hw = out.dim(1) * out.dim(2);
    for (std::int64_t c = 0; c < out.dim(0); ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            Scalar& v = out[c * hw + i];
            v = std::clamp(v * stddev[c] + mean[c], Scalar(0), Scalar(1));
        }
    return out;
}

// Replicate a single-channel tile to the target channel count.
Tensor expand_channels(const Tensor& chw, int target) {
    if (chw.dim(0) == target) return chw;
    if (chw.dim(0) != 1) throw InternalError("expand_channels: expected one channel");
    Tensor out({target, static_cast<int>(chw.dim(1)), static_cast<int>(chw.dim(2))});
    const std::int64_t hw = chw.dim(1) * chw.dim(2);
    for (int c = 0; c < target; ++c) std::copy_n(chw.data(), hw, out.data() + c * hw);
    return out;
}

// Tiles for one mixing instance (one grid column), top to bottom:
// k inputs, k CAMs, k warped inputs, k masks, the mixed image.
std::vector<Tensor> column_tiles(const MixTrace& trace, const Tensor& mixed_images, int sample,
                                 int k, const Dataset& ds) {
    std::vector<Tensor> tiles;
    const int channels = ds.channels();
    for (int i = 0; i < k; ++i)
        tiles.push_back(denormalize(slice_sample(trace.gathered[static_cast<std::size_t>(i)],
                                                 sample),
                                    ds.mean(), ds.stddev()));
    for (int i = 0; i < k; ++i) {
        const int src = trace.pairs[static_cast<std::size_t>(sample) * k + i];
        tiles.push_back(expand_channels(slice_sample(trace.cams, src), channels));
    }
    for (int i = 0; i < k; ++i)
        tiles.push_back(denormalize(slice_sample(trace.warped_images[static_cast<std::size_t>(i)],
                                                 sample),
                                    ds.mean(), ds.stddev()));
    for (int i = 0; i < k; ++i)
        tiles.push_back(expand_channels(slice_sample(trace.masks[static_cast<std::size_t>(i)],
                                                     sample),
                                        channels));
    tiles.push_back(denormalize(slice_sample(mixed_images, sample), ds.mean(), ds.stddev()));
    return tiles;
}

double tile_mean(const Tensor& t) {
    return t.sum() / static_cast<double>(t.numel());
}

// --- task-stage runs ---------------------------------------------------------

struct StrategyRuns {
    Json rows = Json::array();
    std::vector<double> top1s, top5s, losses;
};

StrategyRuns run_strategy(const ExperimentConfig& cfg, const std::string& strategy,
                          const Dataset& train, const Dataset& test, MixingModule* mixer,
                          const TeacherHandle* teacher, const std::string& dir) {
    TaskConfig tcfg = cfg.task;
    tcfg.strategy = parse_strategy(strategy);
    if (mixer) mixer->mutable_config().strategy = tcfg.strategy;

    StrategyRuns out;
    for (std::uint64_t seed : cfg.seeds) {
        const std::string sdir = seed_dir(dir, seed);
        std::unique_ptr<ClassifierModel> model = build_model(arch_for(cfg.arch, train), seed);
        const RunMetrics metrics =
            train_task(train, &test, *model, tcfg,
                       strategy_needs_mixer(tcfg.strategy) ? mixer : nullptr,
                       strategy_needs_teacher(tcfg.strategy) ? teacher : nullptr, seed,
                       sdir + "/diagnostics");
        write_metrics_csv(sdir + "/metrics.csv", metrics);
        const std::string ckpt = sdir + "/task.ckpt";
        const Json finals = finals_json(metrics);
        save_model_checkpoint(ckpt, *model,
                              Json{{"seed", seed},
                                   {"strategy", strategy},
                                   {"dataset", cfg.dataset.name},
                                   {"final", finals}});
        Json row{{"seed", seed}, {"strategy", strategy}, {"checkpoint", ckpt}, {"final", finals}};
        out.rows.push_back(row);
        if (!metrics.epochs.empty()) {
            out.top1s.push_back(metrics.epochs.back().top1);
            out.top5s.push_back(metrics.epochs.back().top5);
            out.losses.push_back(metrics.epochs.back().train_loss);
        }
    }
    return out;
}

void write_results_csv(const std::string& path, const Json& aggregates) {
    std::string csv = std::string("# ") + kResultsSchema + "\n";
    csv += "strategy,seeds,top1_mean,top1_std,top5_mean,top5_std,train_loss_mean\n";
    for (const Json& row : aggregates) {
        const auto field = [&row](const char* outer, const char* inner) {
            if (!row.contains(outer) || row[outer].is_null()) return std::string();
            return csv_field(row[outer][inner].get<double>());
        };
        csv += row["strategy"].get<std::string>() + "," +
               std::to_string(row["seeds"].get<int>()) + "," + field("top1", "mean") + "," +
               field("top1", "stddev") + "," + field("top5", "mean") + "," +
               field("top5", "stddev") + "," + field("train_loss", "mean") + "\n";
    }
    write_text(path, csv);
}

Json base_summary(const ExperimentConfig& cfg, const std::string& command) {
    Json seeds = Json::array();
    for (std::uint64_t s : cfg.seeds) seeds.push_back(s);
    return Json{{"schema", kSummarySchema},
                {"command", command},
                {"name", cfg.name},
                {"dataset", cfg.dataset.name},
                {"seeds", seeds}};
}

}  // namespace

void write_metrics_csv(const std::string& path, const RunMetrics& metrics) {
    std::string csv = std::string("# ") + kMetricsSchema + "\n";
    csv += "epoch,train_loss,top1,top5,seconds,tau,lr\n";
    for (const EpochMetrics& e : metrics.epochs)
        csv += std::to_string(e.epoch) + "," + csv_field(e.train_loss) + "," + csv_field(e.top1) +
               "," + csv_field(e.top5) + "," + csv_field(e.seconds) + "," + csv_field(e.tau) +
               "," + csv_field(e.lr) + "\n";
    write_text(path, csv);
}

std::string prepare_run_dir(const ExperimentConfig& cfg, const std::string& command) {
    const fs::path root = cfg.output_root;
    fs::create_directories(root);
    const std::string base = cfg.name + "-" + command;
    fs::path dir = root / base;
    for (int n = 2; fs::exists(dir); ++n) {
        if (n > 9999) throw IoError("cannot find a free run directory under " + root.string());
        dir = root / (base + "-" + std::to_string(n));
    }
    fs::create_directories(dir);
    write_text((dir / "config.toml").string(), to_toml(cfg).serialize());
    return dir.string();
}

Json cmd_train_teacher(const ExperimentConfig& cfg, const std::string& run_dir) {
    const Dataset train = load_split(cfg, "train");
    const Dataset test = load_split(cfg, "test");

    TaskConfig tcfg = cfg.task;
    tcfg.strategy = MixStrategy::kSimple;  // the teacher is the simple baseline

    Json runs = Json::array();
    std::vector<double> top1s, top5s;
    for (std::uint64_t seed : cfg.seeds) {
        const std::string sdir = seed_dir(run_dir, seed);
        std::unique_ptr<ClassifierModel> model =
            build_model(arch_for(cfg.teacher_arch.empty() ? cfg.arch : cfg.teacher_arch, train),
                        seed);
        const RunMetrics metrics = train_task(train, &test, *model, tcfg, nullptr, nullptr, seed,
                                              sdir + "/diagnostics");
        write_metrics_csv(sdir + "/metrics.csv", metrics);
        const std::string ckpt = sdir + "/teacher.ckpt";
        const Json finals = finals_json(metrics);
        save_model_checkpoint(ckpt, *model,
                              Json{{"seed", seed},
                                   {"role", "teacher"},
                                   {"dataset", cfg.dataset.name},
                                   {"final", finals}});
        runs.push_back(Json{{"seed", seed}, {"checkpoint", ckpt}, {"final", finals}});
        if (!metrics.epochs.empty()) {
            top1s.push_back(metrics.epochs.back().top1);
            top5s.push_back(metrics.epochs.back().top5);
        }
    }

    Json summary = base_summary(cfg, "train-teacher");
    summary["arch"] = cfg.teacher_arch.empty() ? cfg.arch : cfg.teacher_arch;
    summary["runs"] = runs;
    summary["top1"] = agg_json(top1s);
    summary["top5"] = agg_json(top5s);
    return summary;
}

Json cmd_train_mixer(const ExperimentConfig& cfg, const std::string& run_dir) {
    require_artifact(cfg.teacher_checkpoint, "teacher checkpoint", "paths.teacher");
    const TeacherHandle teacher = load_teacher(cfg.teacher_checkpoint);
    const Dataset train = load_split(cfg, "train");
    check_teacher_matches(teacher, train);

    MixerConfig mcfg = cfg.mixer;
    mcfg.strategy = MixStrategy::kFull;  // the search stage trains the full pipeline
    if (mcfg.input_w == 0) mcfg.input_w = train.width();
    if (mcfg.input_h == 0) mcfg.input_h = train.height();
    mcfg.source_dataset = cfg.dataset.name;
    mcfg.teacher_id = fs::path(cfg.teacher_checkpoint).filename().string();

    Json runs = Json::array();
    for (std::uint64_t seed : cfg.seeds) {
        const std::string sdir = seed_dir(run_dir, seed);
        MixingModule mixer(mcfg, seed);
        const RunMetrics metrics = train_mixer(train, teacher, mixer, cfg.search, seed,
                                               sdir + "/diagnostics");
        write_metrics_csv(sdir + "/metrics.csv", metrics);
        const std::string ckpt = sdir + "/mixer.ckpt";
        Json extra{{"seed", seed}, {"epochs", cfg.search.epochs}};
        if (!metrics.epochs.empty()) {
            extra["loss_first_epoch"] = metrics.epochs.front().train_loss;
            extra["loss_last_epoch"] = metrics.epochs.back().train_loss;
        }
        save_mixer_checkpoint(ckpt, mixer, extra);
        runs.push_back(Json{{"seed", seed},
                            {"checkpoint", ckpt},
                            {"tau_final", mixer.tau()},
                            {"final", finals_json(metrics)}});
    }

    Json summary = base_summary(cfg, "train-mixer");
    summary["teacher"] = cfg.teacher_checkpoint;
    summary["k"] = mcfg.k;
    summary["alpha"] = mcfg.alpha;
    summary["runs"] = runs;
    return summary;
}

Json cmd_train_task(const ExperimentConfig& cfg, const std::string& run_dir) {
    const Dataset train = load_split(cfg, "train");
    const Dataset test = load_split(cfg, "test");

    bool any_mixer = false, any_teacher = false;
    for (const std::string& s : cfg.strategies) {
        const MixStrategy strat = parse_strategy(s);
        any_mixer = any_mixer || strategy_needs_mixer(strat);
        any_teacher = any_teacher || strategy_needs_teacher(strat);
    }

    std::unique_ptr<MixingModule> mixer;
    if (any_mixer) {
        require_artifact(cfg.mixer_checkpoint, "mixer checkpoint", "paths.mixer");
        mixer = load_mixer_checkpoint(cfg.mixer_checkpoint);
        check_declared_k(cfg, *mixer);
    }
    std::optional<TeacherHandle> teacher;
    if (any_teacher) {
        require_artifact(cfg.teacher_checkpoint, "teacher checkpoint", "paths.teacher");
        teacher = load_teacher(cfg.teacher_checkpoint);
        check_teacher_matches(*teacher, train);
    }

    Json per_run = Json::array();
    Json aggregates = Json::array();
    for (const std::string& strategy : cfg.strategies) {
        const std::string dir = run_dir + "/" + strategy;
        fs::create_directories(dir);
        const StrategyRuns runs = run_strategy(cfg, strategy, train, test, mixer.get(),
                                               teacher ? &*teacher : nullptr, dir);
        for (const Json& r : runs.rows) per_run.push_back(r);
        aggregates.push_back(Json{{"strategy", strategy},
                                  {"seeds", static_cast<int>(cfg.seeds.size())},
                                  {"top1", agg_json(runs.top1s)},
                                  {"top5", agg_json(runs.top5s)},
                                  {"train_loss", agg_json(runs.losses)}});
    }
    write_results_csv(run_dir + "/results.csv", aggregates);

    Json summary = base_summary(cfg, "train-task");
    summary["arch"] = cfg.arch;
    summary["results"] = aggregates;
    summary["runs"] = per_run;
    return summary;
}

Json cmd_transfer(const ExperimentConfig& cfg, const std::string& run_dir) {
    const std::string strategy = cfg.strategies.front();
    if (!strategy_needs_mixer(parse_strategy(strategy)))
        throw ConfigError("transfer needs a mixer strategy; set task.strategy "
                          "(e.g. \"transformmix\")");
    require_artifact(cfg.mixer_checkpoint, "mixer checkpoint", "paths.mixer");
    require_artifact(cfg.teacher_checkpoint, "teacher checkpoint (target dataset)",
                     "paths.teacher");

    const Dataset train = load_split(cfg, "train");
    const Dataset test = load_split(cfg, "test");
    std::unique_ptr<MixingModule> mixer = load_mixer_checkpoint(cfg.mixer_checkpoint);
    check_declared_k(cfg, *mixer);
    const TeacherHandle teacher = load_teacher(cfg.teacher_checkpoint);
    check_teacher_matches(teacher, train);

    const StrategyRuns runs =
        run_strategy(cfg, strategy, train, test, mixer.get(), &teacher, run_dir);
    Json aggregates = Json::array();
    aggregates.push_back(Json{{"strategy", strategy},
                              {"seeds", static_cast<int>(cfg.seeds.size())},
                              {"top1", agg_json(runs.top1s)},
                              {"top5", agg_json(runs.top5s)},
                              {"train_loss", agg_json(runs.losses)}});
    write_results_csv(run_dir + "/results.csv", aggregates);

    Json summary = base_summary(cfg, "transfer");
    summary["arch"] = cfg.arch;
    summary["strategy"] = strategy;
    summary["mixer_checkpoint"] = cfg.mixer_checkpoint;
    summary["mixer_native"] = Json{{"w", mixer->config().input_w},
                                   {"h", mixer->config().input_h}};
    summary["mixer_source_dataset"] = mixer->config().source_dataset;
    summary["target"] = Json{{"w", train.width()}, {"h", train.height()}};
    summary["results"] = aggregates;
    summary["runs"] = runs.rows;
    return summary;
}

Json cmd_visualize(const ExperimentConfig& cfg, const std::string& run_dir) {
    require_artifact(cfg.mixer_checkpoint, "mixer checkpoint", "paths.mixer");
    require_artifact(cfg.teacher_checkpoint, "teacher checkpoint", "paths.teacher");
    const Dataset train = load_split(cfg, "train");
    std::unique_ptr<MixingModule> mixer = load_mixer_checkpoint(cfg.mixer_checkpoint);
    check_declared_k(cfg, *mixer);
    const TeacherHandle teacher = load_teacher(cfg.teacher_checkpoint);
    check_teacher_matches(teacher, train);

    const MixStrategy strategy = parse_strategy(cfg.strategies.front());
    mixer->mutable_config().strategy =
        strategy_needs_mixer(strategy) ? strategy : MixStrategy::kFull;

    const std::uint64_t seed = cfg.seeds.front();
    const int k = mixer->config().k;
    MixStreams streams = MixStreams::from_seed(seed);
    const std::string grid_path = run_dir + "/grid.png";

    Json summary = base_summary(cfg, "visualize");
    summary["k"] = k;
    summary["rows"] = 4 * k + 1;
    summary["grid"] = grid_path;
    summary["strategy"] = strategy_name(mixer->config().strategy);

    if (cfg.visualize.lambda_sweep) {
        if (k != 2)
            throw ConfigError("visualize.lambda_sweep needs a k=2 mixer; checkpoint has k=" +
                              std::to_string(k));
        if (train.size() < 2) throw InputError("lambda sweep needs at least 2 images");
        RngStream pick = derive_stream(seed, "visualize");
        const std::vector<int> perm = pick.permutation(train.size());
        const std::vector<int> indices(perm.begin(), perm.begin() + 2);
        const ImageBatch batch = train.batch(indices);

        // One sampled state reused across the sweep: fixed pair, fixed
        // noise, only the coefficient changes.
        MixState state = mixer->sample_mix_state(2, streams);
        state.pairs = {0, 1, 1, 0};

        const std::vector<double> lambdas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
        std::vector<std::vector<Tensor>> columns;
        std::vector<double> m2_mass;
        for (double lam : lambdas) {
            state.lambdas.at2(0, 0) = lam;
            state.lambdas.at2(0, 1) = 1 - lam;
            state.lambdas.at2(1, 0) = 1 - lam;
            state.lambdas.at2(1, 1) = lam;
            MixTrace trace;
            const MixedBatchValue mixed = mixer->mix_with_state(
                batch.images, batch.labels, train.num_classes(), &teacher, state, &trace);
            columns.push_back(column_tiles(trace, mixed.images->val, 0, k, train));
            m2_mass.push_back(tile_mean(slice_sample(trace.masks[1], 0)));
        }
        std::vector<Tensor> tiles;
        for (std::size_t row = 0; row < columns[0].size(); ++row)
            for (const auto& col : columns) tiles.push_back(col[row]);
        write_png_grid(grid_path, tiles, static_cast<int>(lambdas.size()));

        summary["mode"] = "lambda-sweep";
        summary["lambdas"] = lambdas;
        // Fig. 5-style readout: at full scale the second input's mask mass
        // grows with its coefficient; desk-scale checkpoints only report it.
        summary["m2_mask_mass"] = m2_mass;
        return summary;
    }

    const int n = cfg.visualize.count;
    if (n > train.size())
        throw InputError("visualize.count=" + std::to_string(n) + " exceeds dataset size " +
                         std::to_string(train.size()));
    RngStream pick = derive_stream(seed, "visualize");
    const std::vector<int> perm = pick.permutation(train.size());
    const std::vector<int> indices(perm.begin(), perm.begin() + n);
    const ImageBatch batch = train.batch(indices);

    MixTrace trace;
    const MixState state = mixer->sample_mix_state(n, streams);
    const MixedBatchValue mixed = mixer->mix_with_state(batch.images, batch.labels,
                                                        train.num_classes(), &teacher, state,
                                                        &trace);
    std::vector<std::vector<Tensor>> columns;
    for (int c = 0; c < n; ++c)
        columns.push_back(column_tiles(trace, mixed.images->val, c, k, train));
    std::vector<Tensor> tiles;
    for (std::size_t row = 0; row < columns[0].size(); ++row)
        for (const auto& col : columns) tiles.push_back(col[row]);
    write_png_grid(grid_path, tiles, n);

    summary["mode"] = "grid";
    summary["count"] = n;
    return summary;
}

Json cmd_bench(const ExperimentConfig& cfg, const std::string& run_dir) {
    require_artifact(cfg.mixer_checkpoint, "mixer checkpoint", "paths.mixer");
    require_artifact(cfg.teacher_checkpoint, "teacher checkpoint", "paths.teacher");
    const Dataset train = load_split(cfg, "train");
    std::unique_ptr<MixingModule> mixer = load_mixer_checkpoint(cfg.mixer_checkpoint);
    check_declared_k(cfg, *mixer);
    const TeacherHandle teacher = load_teacher(cfg.teacher_checkpoint);
    check_teacher_matches(teacher, train);
    mixer->mutable_config().strategy = MixStrategy::kFull;
    mixer->set_trainable(false);  // timing covers mixing, not the backward pass

    const std::uint64_t seed = cfg.seeds.front();
    RngStream pick = derive_stream(seed, "bench");
    const std::vector<int> perm = pick.permutation(train.size());
    std::vector<int> indices(static_cast<std::size_t>(cfg.bench.batch));
    for (std::size_t i = 0; i < indices.size(); ++i)
        indices[i] = perm[i % perm.size()];
    const ImageBatch batch = train.batch(indices);
    const double alpha = mixer->config().alpha;

    MixStreams streams = MixStreams::from_seed(seed);
    const auto time_call = [](const std::function<void()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const auto run_mixer = [&] {
        mixer->mix_batch(batch.images, batch.labels, train.num_classes(), &teacher, streams);
    };
    const auto run_iterative = [&] {
        iterative_mask_optimizer(batch.images, batch.labels, train.num_classes(), alpha,
                                 cfg.bench.steps, teacher, streams);
    };

    run_mixer();  // warm-up, excluded
    run_iterative();
    std::vector<double> mixer_s, iter_s;
    for (int t = 0; t < cfg.bench.trials; ++t) mixer_s.push_back(time_call(run_mixer));
    for (int t = 0; t < cfg.bench.trials; ++t) iter_s.push_back(time_call(run_iterative));

    const Agg ma = aggregate(mixer_s), ia = aggregate(iter_s);
    Json timing{{"schema", kTimingSchema},
                {"batch", cfg.bench.batch},
                {"trials", cfg.bench.trials},
                {"methods",
                 Json{{"transformmix", Json{{"mean_seconds", ma.mean},
                                            {"stddev_seconds", ma.stddev},
                                            {"trial_seconds", mixer_s}}},
                      {"iterative", Json{{"mean_seconds", ia.mean},
                                         {"stddev_seconds", ia.stddev},
                                         {"steps", cfg.bench.steps},
                                         {"trial_seconds", iter_s}}}}},
                {"speedup_mean", ia.mean / ma.mean}};
    write_json_atomic(run_dir + "/timing.json", timing);

    Json summary = base_summary(cfg, "bench");
    summary["timing"] = timing;
    summary["timing_file"] = run_dir + "/timing.json";
    return summary;
}

int run_command(const std::string& command, const std::string& config_path,
                const CliOverrides& overrides) {
    std::string run_dir;
    try {
        const ExperimentConfig cfg = load_experiment_config(config_path, overrides);
        run_dir = prepare_run_dir(cfg, command);

        Json summary;
        if (command == "train-teacher")
            summary = cmd_train_teacher(cfg, run_dir);
        else if (command == "train-mixer")
            summary = cmd_train_mixer(cfg, run_dir);
        else if (command == "train-task")
            summary = cmd_train_task(cfg, run_dir);
        else if (command == "transfer")
            summary = cmd_transfer(cfg, run_dir);
        else if (command == "visualize")
            summary = cmd_visualize(cfg, run_dir);
        else if (command == "bench")
            summary = cmd_bench(cfg, run_dir);
        else
            throw ConfigError("unknown command: " + command);

        summary["run_dir"] = run_dir;
        write_json_atomic(run_dir + "/summary.json", summary);
        Json out{{"ok", true}, {"run_dir", run_dir}, {"summary", summary}};
        std::cout << out.dump() << "\n";
        return 0;
    } catch (const Error& e) {
        Json err{{"ok", false}, {"error", Json{{"kind", e.kind()}, {"message", e.what()}}}};
        if (!run_dir.empty()) {
            try {
                write_json_atomic(run_dir + "/error.json", err);
            } catch (...) {
            }
        }
        std::cout << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        Json err{{"ok", false},
                 {"error", Json{{"kind", "internal"}, {"message", e.what()}}}};
        std::cout << err.dump() << "\n";
        return 1;
    }
}

}  // namespace mixforge
