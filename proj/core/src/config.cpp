#include "mixforge/config.hpp"

#include <algorithm>
#include <cstdlib>

#include "mixforge/errors.hpp"

namespace mixforge {

WarpPadding parse_warp_padding(const std::string& name) {
    if (name == "zeros") return WarpPadding::kZeros;
    if (name == "reflect") return WarpPadding::kReflect;
    throw ConfigError("unknown padding mode: " + name + " (want zeros|reflect)");
}

std::string warp_padding_name(WarpPadding p) {
    return p == WarpPadding::kZeros ? "zeros" : "reflect";
}

namespace {

int get_pos_int(const TomlTable& t, const std::string& key, int fallback) {
    const std::int64_t v = t.get_int_or(key, fallback);
    if (v < 1 || v > std::numeric_limits<int>::max())
        throw ConfigError("config key '" + key + "' must be a positive integer");
    return static_cast<int>(v);
}

int get_nonneg_int(const TomlTable& t, const std::string& key, int fallback) {
    const std::int64_t v = t.get_int_or(key, fallback);
    if (v < 0 || v > std::numeric_limits<int>::max())
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    return static_cast<int>(v);
}

}  // namespace

ExperimentConfig experiment_config_from_toml(const TomlTable& table,
                                             const CliOverrides& overrides) {
    ExperimentConfig cfg;
    cfg.name = table.get_string_or("name", cfg.name);

    cfg.dataset.name = table.get_string_or("dataset.name", "");
    cfg.dataset.path = table.get_string_or("dataset.path", "");
    cfg.dataset.subset_fraction = table.get_float_or("dataset.subset_fraction", 1.0);
    const std::int64_t subset_seed = table.get_int_or("dataset.subset_seed", 0);
    if (subset_seed < 0) throw ConfigError("dataset.subset_seed must be non-negative");
    cfg.dataset.seed = static_cast<std::uint64_t>(subset_seed);

    cfg.arch = table.get_string_or("arch.family", cfg.arch);
    cfg.teacher_arch = table.get_string_or("arch.teacher", cfg.arch);

    cfg.search.learning_rate = table.get_float_or("search.learning_rate", cfg.search.learning_rate);
    cfg.search.weight_decay = table.get_float_or("search.weight_decay", cfg.search.weight_decay);
    cfg.search.epochs = get_nonneg_int(table, "search.epochs", cfg.search.epochs);
    cfg.search.batch_size = get_pos_int(table, "search.batch_size", cfg.search.batch_size);

    if (table.has("mixer.k")) cfg.declared_k = get_pos_int(table, "mixer.k", cfg.mixer.k);
    cfg.mixer.k = cfg.declared_k.value_or(cfg.mixer.k);
    cfg.mixer.alpha = table.get_float_or("mixer.alpha", cfg.mixer.alpha);
    cfg.mixer.mask_layers = get_pos_int(table, "mixer.mask_layers", cfg.mixer.mask_layers);
    cfg.mixer.mask_channels = get_pos_int(table, "mixer.mask_channels", cfg.mixer.mask_channels);
    cfg.mixer.mask_kernel = get_pos_int(table, "mixer.mask_kernel", cfg.mixer.mask_kernel);
    cfg.mixer.noise_grid = get_pos_int(table, "mixer.noise_grid", cfg.mixer.noise_grid);
    cfg.mixer.tau_init = table.get_float_or("mixer.tau_init", cfg.mixer.tau_init);
    cfg.mixer.tau_min = table.get_float_or("mixer.tau_min", cfg.mixer.tau_min);
    cfg.mixer.input_w = get_nonneg_int(table, "mixer.input_w", 0);   // 0: dataset dims
    cfg.mixer.input_h = get_nonneg_int(table, "mixer.input_h", 0);
    cfg.mixer.padding = parse_warp_padding(
        table.get_string_or("mixer.padding", warp_padding_name(cfg.mixer.padding)));

    cfg.task.epochs = get_nonneg_int(table, "task.epochs", cfg.task.epochs);
    cfg.task.learning_rate = table.get_float_or("task.learning_rate", cfg.task.learning_rate);
    {
        std::vector<std::int64_t> fallback(cfg.task.decay_epochs.begin(),
                                           cfg.task.decay_epochs.end());
        cfg.task.decay_epochs.clear();
        for (std::int64_t d : table.get_int_array_or("task.decay_epochs", fallback)) {
            if (d < 0 || d > std::numeric_limits<int>::max())
                throw ConfigError("task.decay_epochs entries must be non-negative integers");
            cfg.task.decay_epochs.push_back(static_cast<int>(d));
        }
    }
    cfg.task.decay_factor = table.get_float_or("task.decay_factor", cfg.task.decay_factor);
    cfg.task.momentum = table.get_float_or("task.momentum", cfg.task.momentum);
    cfg.task.weight_decay = table.get_float_or("task.weight_decay", cfg.task.weight_decay);
    cfg.task.batch_size = get_pos_int(table, "task.batch_size", cfg.task.batch_size);
    cfg.task.alpha = table.get_float_or("task.alpha", cfg.mixer.alpha);
    cfg.task.augment = table.get_bool_or("task.augment", cfg.task.augment);
    cfg.task.mix_probability = table.get_float_or("task.mix_probability", cfg.task.mix_probability);

    std::string default_strategy = strategy_name(cfg.task.strategy);
    cfg.strategies = table.get_string_array_or(
        "task.strategies", {table.get_string_or("task.strategy", default_strategy)});
    if (overrides.strategy) cfg.strategies = {*overrides.strategy};
    if (cfg.strategies.empty()) throw ConfigError("task.strategies must not be empty");
    for (const std::string& s : cfg.strategies) parse_strategy(s);  // validate early
    cfg.task.strategy = parse_strategy(cfg.strategies.front());

    cfg.seeds.clear();
    for (std::int64_t s : table.get_int_array_or("run.seeds", {0})) {
        if (s < 0) throw ConfigError("run.seeds must be non-negative");
        cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (overrides.seed) cfg.seeds = {*overrides.seed};
    if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");

    // Root precedence: --output flag, then MIXFORGE_OUTPUT_ROOT, then the
    // file, then the default. The resolved value is what run dirs record.
    cfg.output_root = table.get_string_or("output.root", cfg.output_root);
    if (const char* env = std::getenv("MIXFORGE_OUTPUT_ROOT"); env && *env)
        cfg.output_root = env;
    if (overrides.output_root) cfg.output_root = *overrides.output_root;

    cfg.teacher_checkpoint = table.get_string_or("paths.teacher", "");
    cfg.mixer_checkpoint = table.get_string_or("paths.mixer", "");

    cfg.bench.steps = get_pos_int(table, "bench.steps", cfg.bench.steps);
    cfg.bench.trials = get_pos_int(table, "bench.trials", cfg.bench.trials);
    cfg.bench.batch = get_pos_int(table, "bench.batch", cfg.bench.batch);

    cfg.visualize.count = get_pos_int(table, "visualize.count", cfg.visualize.count);
    cfg.visualize.lambda_sweep = table.get_bool_or("visualize.lambda_sweep",
                                                   cfg.visualize.lambda_sweep);

    const std::vector<std::string> unread = table.unread_keys();
    if (!unread.empty()) {
        std::string msg = "unknown config keys:";
        for (const std::string& k : unread) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path, const CliOverrides& overrides) {
    return experiment_config_from_toml(parse_toml_file(path), overrides);
}

TomlTable to_toml(const ExperimentConfig& cfg) {
    TomlTable t;
    t.set("name", TomlValue::of(cfg.name));

    t.set("dataset.name", TomlValue::of(cfg.dataset.name));
    t.set("dataset.path", TomlValue::of(cfg.dataset.path));
    t.set("dataset.subset_fraction", TomlValue::of(cfg.dataset.subset_fraction));
    t.set("dataset.subset_seed", TomlValue::of(static_cast<std::int64_t>(cfg.dataset.seed)));

    t.set("arch.family", TomlValue::of(cfg.arch));
    t.set("arch.teacher", TomlValue::of(cfg.teacher_arch.empty() ? cfg.arch : cfg.teacher_arch));

    t.set("search.learning_rate", TomlValue::of(cfg.search.learning_rate));
    t.set("search.weight_decay", TomlValue::of(cfg.search.weight_decay));
    t.set("search.epochs", TomlValue::of(static_cast<std::int64_t>(cfg.search.epochs)));
    t.set("search.batch_size", TomlValue::of(static_cast<std::int64_t>(cfg.search.batch_size)));

    t.set("mixer.k", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.k)));
    t.set("mixer.alpha", TomlValue::of(cfg.mixer.alpha));
    t.set("mixer.mask_layers", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.mask_layers)));
    t.set("mixer.mask_channels",
          TomlValue::of(static_cast<std::int64_t>(cfg.mixer.mask_channels)));
    t.set("mixer.mask_kernel", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.mask_kernel)));
    t.set("mixer.noise_grid", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.noise_grid)));
    t.set("mixer.tau_init", TomlValue::of(cfg.mixer.tau_init));
    t.set("mixer.tau_min", TomlValue::of(cfg.mixer.tau_min));
    t.set("mixer.input_w", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.input_w)));
    t.set("mixer.input_h", TomlValue::of(static_cast<std::int64_t>(cfg.mixer.input_h)));
    t.set("mixer.padding", TomlValue::of(warp_padding_name(cfg.mixer.padding)));

    t.set("task.epochs", TomlValue::of(static_cast<std::int64_t>(cfg.task.epochs)));
    t.set("task.learning_rate", TomlValue::of(cfg.task.learning_rate));
    {
        TomlValue arr;
        arr.kind = TomlValue::Kind::kArray;
        for (int d : cfg.task.decay_epochs)
            arr.array.push_back(TomlValue::of(static_cast<std::int64_t>(d)));
        t.set("task.decay_epochs", arr);
    }
    t.set("task.decay_factor", TomlValue::of(cfg.task.decay_factor));
    t.set("task.momentum", TomlValue::of(cfg.task.momentum));
    t.set("task.weight_decay", TomlValue::of(cfg.task.weight_decay));
    t.set("task.batch_size", TomlValue::of(static_cast<std::int64_t>(cfg.task.batch_size)));
    t.set("task.alpha", TomlValue::of(cfg.task.alpha));
    t.set("task.augment", TomlValue::of(cfg.task.augment));
    t.set("task.mix_probability", TomlValue::of(cfg.task.mix_probability));
    {
        TomlValue arr;
        arr.kind = TomlValue::Kind::kArray;
        for (const std::string& s : cfg.strategies) arr.array.push_back(TomlValue::of(s));
        t.set("task.strategies", arr);
    }

    {
        TomlValue arr;
        arr.kind = TomlValue::Kind::kArray;
        for (std::uint64_t s : cfg.seeds)
            arr.array.push_back(TomlValue::of(static_cast<std::int64_t>(s)));
        t.set("run.seeds", arr);
    }

    t.set("output.root", TomlValue::of(cfg.output_root));
    if (!cfg.teacher_checkpoint.empty())
        t.set("paths.teacher", TomlValue::of(cfg.teacher_checkpoint));
    if (!cfg.mixer_checkpoint.empty()) t.set("paths.mixer", TomlValue::of(cfg.mixer_checkpoint));

    t.set("bench.steps", TomlValue::of(static_cast<std::int64_t>(cfg.bench.steps)));
    t.set("bench.trials", TomlValue::of(static_cast<std::int64_t>(cfg.bench.trials)));
    t.set("bench.batch", TomlValue::of(static_cast<std::int64_t>(cfg.bench.batch)));

    t.set("visualize.count", TomlValue::of(static_cast<std::int64_t>(cfg.visualize.count)));
    t.set("visualize.lambda_sweep", TomlValue::of(cfg.visualize.lambda_sweep));
    return t;
}

}  // namespace mixforge
