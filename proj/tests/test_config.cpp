#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "mixforge/config.hpp"
#include "support/fixtures.hpp"

using namespace mixforge;

namespace {

void clear_output_env() { unsetenv("MIXFORGE_OUTPUT_ROOT"); }

bool message_contains(const Error& e, const std::string& needle) {
    return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("the TOML parser covers the supported value kinds") {
    const std::string text =
        "name = \"demo\"  # trailing comment\n"
        "title = 'no \\escapes here'\n"
        "\n"
        "[search]\n"
        "epochs = 1_000\n"
        "learning_rate = 5e-4\n"
        "offset = -3\n"
        "ratio = 0.25\n"
        "enabled = true\n"
        "disabled = false\n"
        "\n"
        "[task]\n"
        "decay_epochs = [100, 150,\n"
        "                200]  # arrays may span lines\n"
        "strategies = [\"mixup\", \"cutmix\"]\n"
        "weights = [0.5, 1]\n";
    TomlTable t = parse_toml(text, "inline.toml");

    CHECK(t.get_string("name") == "demo");
    CHECK(t.get_string("title") == "no \\escapes here");
    CHECK(t.get_int("search.epochs") == 1000);
    CHECK(t.get_float("search.learning_rate") == 5e-4);
    CHECK(t.get_int("search.offset") == -3);
    CHECK(t.get_float("search.ratio") == 0.25);
    CHECK(t.get_bool("search.enabled"));
    CHECK_FALSE(t.get_bool("search.disabled"));
    CHECK(t.get_int_array("task.decay_epochs") == std::vector<std::int64_t>{100, 150, 200});
    CHECK(t.get_string_array("task.strategies") == std::vector<std::string>{"mixup", "cutmix"});
    CHECK(t.get_float_array("task.weights") == std::vector<double>{0.5, 1.0});
    // get_float accepts an integer-typed value.
    CHECK(t.get_float("search.epochs") == 1000.0);
    CHECK(t.unread_keys().empty());
}

TEST_CASE("basic strings support the escape set, literal strings none") {
    TomlTable t = parse_toml("a = \"x\\\"y\\\\z\\n\\t\\r\"\nb = 'c:\\temp'\n");
    CHECK(t.get_string("a") == "x\"y\\z\n\t\r");
    CHECK(t.get_string("b") == "c:\\temp");
}

TEST_CASE("syntax errors carry the origin and a line number") {
    auto expect_error = [](const std::string& text, const std::string& needle) {
        try {
            (void)parse_toml(text, "bad.toml");
            FAIL_CHECK("expected ConfigError for: " << text);
        } catch (const ConfigError& e) {
            CHECK(message_contains(e, "bad.toml:"));
            CHECK(message_contains(e, needle));
        }
    };
    expect_error("x 5\n", "expected '='");
    expect_error("x = \"unterminated\n", "string");
    expect_error("x = [1, 2\n", "unterminated array");
    expect_error("x = \"bad \\q escape\"\n", "escape");
    expect_error("x = banana\n", "unsupported value");
    expect_error("a = 1\na = 2\n", "duplicate key 'a'");
    expect_error("x = 1.2.3\n", "malformed");
    expect_error("x = 99999999999999999999999\n", "out of range");
    expect_error("[section\nx = 1\n", "']'");
    expect_error("x = 1 y\n", "trailing");
    expect_error("x = 5\n[s]\nx = 1 = 2\n", "trailing");
}

TEST_CASE("typed getters reject wrong kinds and report missing keys") {
    TomlTable t = parse_toml("a = \"text\"\nb = 7\nc = [1, \"x\"]\n");
    CHECK_THROWS_AS((void)t.get_int("a"), ConfigError);
    CHECK_THROWS_AS((void)t.get_string("b"), ConfigError);
    CHECK_THROWS_AS((void)t.get_bool("b"), ConfigError);
    CHECK_THROWS_AS((void)t.get_float("a"), ConfigError);
    CHECK_THROWS_AS((void)t.get_int_array("b"), ConfigError);
    CHECK_THROWS_AS((void)t.get_int_array("c"), ConfigError);
    CHECK_THROWS_AS((void)t.get_string("missing"), ConfigError);
    // The *_or variants still reject a present key of the wrong type.
    CHECK_THROWS_AS((void)t.get_int_or("a", 1), ConfigError);
    CHECK(t.get_int_or("missing", 42) == 42);
}

TEST_CASE("unread-key tracking marks only keys seen through getters") {
    TomlTable t = parse_toml("a = 1\nb = 2\n");
    CHECK(t.has("a"));  // `has` alone does not mark the key as read
    CHECK(t.unread_keys() == std::vector<std::string>{"a", "b"});
    (void)t.get_int("a");
    CHECK(t.unread_keys() == std::vector<std::string>{"b"});
    (void)t.get_int_or("b", 0);
    CHECK(t.unread_keys().empty());
}

TEST_CASE("serialize and parse are inverse on all value kinds") {
    TomlTable t;
    t.set("top", TomlValue::of(std::string("plain")));
    t.set("s.text", TomlValue::of(std::string("quote\" slash\\ nl\n tab\t")));
    t.set("s.count", TomlValue::of(static_cast<std::int64_t>(-12)));
    t.set("s.rate", TomlValue::of(0.1));
    t.set("s.flag", TomlValue::of(true));
    TomlValue arr;
    arr.kind = TomlValue::Kind::kArray;
    arr.array.push_back(TomlValue::of(static_cast<std::int64_t>(3)));
    arr.array.push_back(TomlValue::of(static_cast<std::int64_t>(4)));
    t.set("s.steps", arr);

    const TomlTable back = parse_toml(t.serialize(), "round.toml");
    CHECK(back.get_string("top") == "plain");
    CHECK(back.get_string("s.text") == "quote\" slash\\ nl\n tab\t");
    CHECK(back.get_int("s.count") == -12);
    CHECK(back.get_float("s.rate") == 0.1);  // %.17g keeps the exact double
    CHECK(back.get_bool("s.flag"));
    CHECK(back.get_int_array("s.steps") == std::vector<std::int64_t>{3, 4});
    CHECK(back.keys() == t.keys());
}

TEST_CASE("experiment config defaults hold for an empty file") {
    clear_output_env();
    const ExperimentConfig cfg = experiment_config_from_toml(parse_toml(""));
    CHECK(cfg.name == "experiment");
    CHECK(cfg.arch == "resnet-18");
    CHECK(cfg.teacher_arch == "resnet-18");  // defaults to the task arch
    CHECK(cfg.strategies == std::vector<std::string>{"simple"});
    CHECK(cfg.task.strategy == MixStrategy::kSimple);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
    CHECK(cfg.output_root == "runs");
    CHECK_FALSE(cfg.declared_k.has_value());
    CHECK(cfg.mixer.k == 2);
    CHECK(cfg.mixer.padding == WarpPadding::kZeros);
}

TEST_CASE("unknown config keys are rejected with the offending name") {
    try {
        (void)experiment_config_from_toml(parse_toml("[task]\nepoch = 10\n"));
        FAIL_CHECK("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(message_contains(e, "unknown config keys"));
        CHECK(message_contains(e, "'task.epoch'"));
    }
}

TEST_CASE("experiment fields parse from their sections") {
    clear_output_env();
    const std::string text =
        "name = \"ablation\"\n"
        "[dataset]\n"
        "name = \"cifar10\"\n"
        "path = \"/data/cifar\"\n"
        "subset_fraction = 0.1\n"
        "subset_seed = 3\n"
        "[arch]\n"
        "family = \"preact-resnet-18\"\n"
        "teacher = \"toy-cnn\"\n"
        "[mixer]\n"
        "k = 3\n"
        "alpha = 0.4\n"
        "padding = \"reflect\"\n"
        "[task]\n"
        "epochs = 30\n"
        "decay_epochs = [10, 20]\n"
        "strategies = [\"transformmix\", \"mixup\"]\n"
        "[run]\n"
        "seeds = [5, 6]\n"
        "[output]\n"
        "root = \"out\"\n";
    const ExperimentConfig cfg = experiment_config_from_toml(parse_toml(text));
    CHECK(cfg.name == "ablation");
    CHECK(cfg.dataset.name == "cifar10");
    CHECK(cfg.dataset.path == "/data/cifar");
    CHECK(cfg.dataset.subset_fraction == 0.1);
    CHECK(cfg.dataset.seed == 3);
    CHECK(cfg.arch == "preact-resnet-18");
    CHECK(cfg.teacher_arch == "toy-cnn");
    REQUIRE(cfg.declared_k.has_value());
    CHECK(*cfg.declared_k == 3);
    CHECK(cfg.mixer.k == 3);
    CHECK(cfg.mixer.alpha == 0.4);
    CHECK(cfg.mixer.padding == WarpPadding::kReflect);
    // task.alpha falls back to the mixer alpha when not spelled out.
    CHECK(cfg.task.alpha == 0.4);
    CHECK(cfg.task.epochs == 30);
    CHECK(cfg.task.decay_epochs == std::vector<int>{10, 20});
    CHECK(cfg.strategies == std::vector<std::string>{"transformmix", "mixup"});
    CHECK(cfg.task.strategy == MixStrategy::kFull);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{5, 6});
    CHECK(cfg.output_root == "out");
}

TEST_CASE("strategy names are validated at load time, not first use") {
    CHECK_THROWS_AS(
        (void)experiment_config_from_toml(parse_toml("[task]\nstrategy = \"bogus\"\n")),
        ConfigError);
    CliOverrides ov;
    ov.strategy = "bogus";
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml(""), ov), ConfigError);
}

TEST_CASE("config rejects out-of-range scalar fields") {
    CHECK_THROWS_AS(
        (void)experiment_config_from_toml(parse_toml("[dataset]\nsubset_seed = -1\n")),
        ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[mixer]\nk = 0\n")),
                    ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[task]\nbatch_size = 0\n")),
                    ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[run]\nseeds = [-1]\n")),
                    ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[run]\nseeds = []\n")),
                    ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[task]\nstrategies = []\n")),
                    ConfigError);
    CHECK_THROWS_AS((void)experiment_config_from_toml(parse_toml("[mixer]\npadding = \"wrap\"\n")),
                    ConfigError);
}

TEST_CASE("CLI overrides replace the seed list and the strategy sweep") {
    clear_output_env();
    const std::string text =
        "[run]\nseeds = [1, 2, 3]\n"
        "[task]\nstrategies = [\"mixup\", \"cutmix\"]\n";
    CliOverrides ov;
    ov.seed = 9;
    ov.strategy = "full";
    const ExperimentConfig cfg = experiment_config_from_toml(parse_toml(text), ov);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{9});
    CHECK(cfg.strategies == std::vector<std::string>{"full"});
    CHECK(cfg.task.strategy == MixStrategy::kFull);
}

TEST_CASE("output root precedence: flag over environment over file over default") {
    const std::string text = "[output]\nroot = \"from-file\"\n";

    clear_output_env();
    CHECK(experiment_config_from_toml(parse_toml(text)).output_root == "from-file");
    CHECK(experiment_config_from_toml(parse_toml("")).output_root == "runs");

    setenv("MIXFORGE_OUTPUT_ROOT", "from-env", 1);
    CHECK(experiment_config_from_toml(parse_toml(text)).output_root == "from-env");

    CliOverrides ov;
    ov.output_root = "from-flag";
    CHECK(experiment_config_from_toml(parse_toml(text), ov).output_root == "from-flag");
    clear_output_env();
}

TEST_CASE("warp padding names round-trip and reject unknowns") {
    CHECK(parse_warp_padding("zeros") == WarpPadding::kZeros);
    CHECK(parse_warp_padding("reflect") == WarpPadding::kReflect);
    CHECK(warp_padding_name(WarpPadding::kZeros) == "zeros");
    CHECK(warp_padding_name(WarpPadding::kReflect) == "reflect");
    CHECK_THROWS_AS((void)parse_warp_padding("wrap"), ConfigError);
}

TEST_CASE("to_toml round-trips through the parser and the loader") {
    clear_output_env();
    const std::string text =
        "name = \"roundtrip\"\n"
        "[dataset]\nname = \"image-folder\"\npath = \"/tmp/x\"\nsubset_fraction = 0.5\n"
        "[arch]\nfamily = \"toy-cnn\"\n"
        "[mixer]\nk = 3\nalpha = 0.2\ntau_init = 0.7\npadding = \"reflect\"\n"
        "[search]\nepochs = 7\nlearning_rate = 0.002\n"
        "[task]\nepochs = 11\ndecay_epochs = [4, 8]\nstrategies = [\"stn-only\", \"simple\"]\n"
        "[run]\nseeds = [3, 4]\n"
        "[paths]\nteacher = \"t.ckpt\"\nmixer = \"m.ckpt\"\n"
        "[bench]\nsteps = 50\ntrials = 4\nbatch = 16\n"
        "[visualize]\ncount = 6\nlambda_sweep = true\n";
    const ExperimentConfig a = experiment_config_from_toml(parse_toml(text));
    const ExperimentConfig b = experiment_config_from_toml(parse_toml(to_toml(a).serialize()));

    CHECK(b.name == a.name);
    CHECK(b.dataset.name == a.dataset.name);
    CHECK(b.dataset.path == a.dataset.path);
    CHECK(b.dataset.subset_fraction == a.dataset.subset_fraction);
    CHECK(b.dataset.seed == a.dataset.seed);
    CHECK(b.arch == a.arch);
    CHECK(b.teacher_arch == a.teacher_arch);
    CHECK(b.search.learning_rate == a.search.learning_rate);
    CHECK(b.search.weight_decay == a.search.weight_decay);
    CHECK(b.search.epochs == a.search.epochs);
    CHECK(b.search.batch_size == a.search.batch_size);
    CHECK(b.mixer.k == a.mixer.k);
    CHECK(b.mixer.alpha == a.mixer.alpha);
    CHECK(b.mixer.tau_init == a.mixer.tau_init);
    CHECK(b.mixer.tau_min == a.mixer.tau_min);
    CHECK(b.mixer.padding == a.mixer.padding);
    CHECK(b.task.epochs == a.task.epochs);
    CHECK(b.task.decay_epochs == a.task.decay_epochs);
    CHECK(b.task.alpha == a.task.alpha);
    CHECK(b.strategies == a.strategies);
    CHECK(b.task.strategy == a.task.strategy);
    CHECK(b.seeds == a.seeds);
    CHECK(b.output_root == a.output_root);
    CHECK(b.teacher_checkpoint == a.teacher_checkpoint);
    CHECK(b.mixer_checkpoint == a.mixer_checkpoint);
    CHECK(b.bench.steps == a.bench.steps);
    CHECK(b.bench.trials == a.bench.trials);
    CHECK(b.bench.batch == a.bench.batch);
    CHECK(b.visualize.count == a.visualize.count);
    CHECK(b.visualize.lambda_sweep == a.visualize.lambda_sweep);
}

TEST_CASE("load_experiment_config reads a file and flags unreadable paths") {
    fixtures::TempDir dir("config");
    const std::string path = dir.file("exp.toml");
    {
        std::ofstream out(path);
        out << "name = \"from-disk\"\n[task]\nepochs = 3\ndecay_epochs = []\n";
    }
    clear_output_env();
    const ExperimentConfig cfg = load_experiment_config(path);
    CHECK(cfg.name == "from-disk");
    CHECK(cfg.task.epochs == 3);
    CHECK(cfg.task.decay_epochs.empty());

    CHECK_THROWS_AS((void)load_experiment_config(dir.file("absent.toml")), IoError);
}
