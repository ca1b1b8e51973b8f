#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixforge/data.hpp"
#include "mixforge/mixer.hpp"
#include "mixforge/toml.hpp"
#include "mixforge/training.hpp"

namespace mixforge {

struct BenchConfig {
    int steps = 100;   // budget of the iterative comparator
    int trials = 10;
    int batch = 128;
};

struct VisualizeConfig {
    int count = 4;              // mixing instances (grid columns)
    bool lambda_sweep = false;  // fixed pair, lambda in {0.1,...,0.9}
};

// Flag-level overrides; each replaces the corresponding file value.
struct CliOverrides {
    std::optional<std::uint64_t> seed;     // replaces the seed list
    std::optional<std::string> strategy;   // replaces the strategy sweep
    std::optional<std::string> output_root;
};

// One experiment file drives every subcommand; sections mirror the module
// configs.
struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    std::string arch = "resnet-18";  // task network family
    std::string teacher_arch;        // defaults to `arch`
    SearchConfig search;
    TaskConfig task;
    MixerConfig mixer;
    std::vector<std::string> strategies;  // task-stage sweep, one result row each
    std::optional<int> declared_k;        // set when the file spells out mixer.k
    std::vector<std::uint64_t> seeds = {0};
    std::string output_root = "runs";
    std::string teacher_checkpoint;
    std::string mixer_checkpoint;
    BenchConfig bench;
    VisualizeConfig visualize;
};

WarpPadding parse_warp_padding(const std::string& name);
std::string warp_padding_name(WarpPadding p);

// Parses and validates an experiment file, applying CLI overrides. Unknown
// keys are ConfigErrors (typo protection).
ExperimentConfig load_experiment_config(const std::string& path, const CliOverrides& overrides = {});
ExperimentConfig experiment_config_from_toml(const TomlTable& table,
                                             const CliOverrides& overrides = {});

// Fully materialized config (defaults included) — what run directories
// record. Round-trips through experiment_config_from_toml.
TomlTable to_toml(const ExperimentConfig& cfg);

}  // namespace mixforge
