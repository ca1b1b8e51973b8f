#pragma once

#include <string>

#include "mixforge/checkpoint.hpp"
#include "mixforge/config.hpp"
#include "mixforge/training.hpp"

namespace mixforge {

// Subcommand implementations. Each receives the run directory prepared by
// `prepare_run_dir` (resolved config already written), produces its
// artifacts there, and returns the summary that run_command persists as
// summary.json. Exposed individually so tests can drive them in-process.
Json cmd_train_teacher(const ExperimentConfig& cfg, const std::string& run_dir);
Json cmd_train_mixer(const ExperimentConfig& cfg, const std::string& run_dir);
Json cmd_train_task(const ExperimentConfig& cfg, const std::string& run_dir);
Json cmd_transfer(const ExperimentConfig& cfg, const std::string& run_dir);
Json cmd_visualize(const ExperimentConfig& cfg, const std::string& run_dir);
Json cmd_bench(const ExperimentConfig& cfg, const std::string& run_dir);

// Creates <output_root>/<name>-<command>[-N] (first free N), writes the
// fully resolved config as config.toml inside, returns the path.
std::string prepare_run_dir(const ExperimentConfig& cfg, const std::string& command);

// metrics.csv: "# mixforge.metrics.v1" then a header row, one row per
// epoch; NaN fields are left empty.
void write_metrics_csv(const std::string& path, const RunMetrics& metrics);

// Full CLI entry: load config, prepare the run dir, dispatch, persist
// summary.json. On failure prints one line of error JSON ({"ok": false,
// "error": {"kind", "message"}}) to stdout, writes it as error.json when a
// run dir exists, and returns a nonzero exit code.
int run_command(const std::string& command, const std::string& config_path,
                const CliOverrides& overrides);

}  // namespace mixforge
