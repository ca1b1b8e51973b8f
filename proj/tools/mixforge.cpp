#include <cstdint>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "mixforge/harness.hpp"

namespace {

struct SubArgs {
    std::string config;
    std::int64_t seed = -1;  // -1: not given
    std::string strategy;
    std::string output;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixforge: learnable sample mixing — search, task training, transfer,\n"
                 "visualization and the mixing-time benchmark"};
    app.require_subcommand(1);

    const std::map<std::string, std::string> commands = {
        {"train-teacher", "Train the frozen teacher (simple baseline, no mixing)"},
        {"train-mixer", "Search stage: train the mixing module against the teacher"},
        {"train-task", "Train task classifiers with a strategy sweep"},
        {"transfer", "Apply a mixer trained elsewhere to this dataset"},
        {"visualize", "Render inputs/CAMs/warps/masks/mix as a PNG grid"},
        {"bench", "Time mixing against the iterative-mask comparator"},
    };

    std::map<std::string, SubArgs> args;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        SubArgs& a = args[name];
        // Existence is checked by the harness so a missing file still
        // produces the machine-readable error JSON.
        sub->add_option("--config", a.config, "experiment TOML file")->required();
        sub->add_option("--seed", a.seed, "override the config's seed list with one seed")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--strategy", a.strategy,
                        "override the task strategy sweep with one strategy");
        sub->add_option("--output", a.output, "override the output root directory");
    }

    CLI11_PARSE(app, argc, argv);

    for (const auto& [name, help] : commands) {
        if (!app.got_subcommand(name)) continue;
        const SubArgs& a = args[name];
        mixforge::CliOverrides overrides;
        if (a.seed >= 0) overrides.seed = static_cast<std::uint64_t>(a.seed);
        if (!a.strategy.empty()) overrides.strategy = a.strategy;
        if (!a.output.empty()) overrides.output_root = a.output;
        return mixforge::run_command(name, a.config, overrides);
    }
    return 1;  // unreachable: require_subcommand(1)
}
