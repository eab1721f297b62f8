#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "csmf/errors.hpp"
#include "csmf/run_config.hpp"

using csmf::build_run_config;
using csmf::ConfigError;
using csmf::IoError;
using csmf::MarginApplication;
using csmf::ParseError;
using csmf::PipelineMode;
using csmf::PruneMethod;
using csmf::RunConfig;

namespace {

struct TempFile {
    std::string path;
    TempFile(std::string p, const std::string& content) : path(std::move(p)) {
        std::ofstream os(path);
        os << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

// CSMF_SEED leaks into every build_run_config call, so each test scrubs it
// and restores whatever was there before.
struct SeedEnvGuard {
    std::string saved;
    bool had = false;
    SeedEnvGuard() {
        if (const char* v = std::getenv("CSMF_SEED")) {
            saved = v;
            had = true;
        }
        unsetenv("CSMF_SEED");
    }
    ~SeedEnvGuard() {
        if (had)
            setenv("CSMF_SEED", saved.c_str(), 1);
        else
            unsetenv("CSMF_SEED");
    }
};

} // namespace

TEST_CASE("defaults pin the documented recipe") {
    RunConfig c;
    CHECK(c.seed == 1);
    CHECK(c.generator.users == 5000);
    CHECK(c.generator.items == 2000);
    CHECK(c.generator.requests_per_user == 3);
    CHECK(c.generator.rho_conflict == 0.5);
    CHECK(c.generator.click_rate == 0.3);
    CHECK(c.generator.conversion_rate == 0.03);
    CHECK(c.generator.split_tick == 2);

    CHECK(c.embedding_width == 8);
    CHECK(c.embedding_layout == csmf::BlockLayout{4, 2, 2});
    CHECK(c.hidden_widths == std::vector<std::size_t>{128, 64});
    REQUIRE(c.hidden_layouts.size() == 2);
    CHECK(c.hidden_layouts[0] == csmf::BlockLayout{64, 32, 32});
    CHECK(c.hidden_layouts[1] == csmf::BlockLayout{32, 16, 16});
    CHECK(c.final_layout == csmf::BlockLayout{32, 16, 16});
    CHECK(c.init_scale == 0.05);
    CHECK(c.structure);

    CHECK(c.mode == PipelineMode::Csmf);
    CHECK(c.epochs == std::array<int, 3>{3, 2, 2});
    CHECK(c.batch_size == 256);
    CHECK(c.learning_rate == 1e-4);
    CHECK(c.prune_method == PruneMethod::CumulativePercentile);
    CHECK(c.prune_value == 0.75);
    CHECK(c.margin.min_separation == 0.1);
    CHECK(c.margin.conflict_gain == 1.8);
    CHECK(c.margin.application == MarginApplication::RequiredSeparation);
    CHECK(c.recovery_fraction == 0.1);
    CHECK(c.max_negatives == 63);

    CHECK(c.weights.exposure == 1.0);
    CHECK(c.weights.click == 1.8);
    CHECK(c.weights.conversion == 1.2);
    CHECK(c.cutoffs == std::vector<std::size_t>{50});
    CHECK(c.data_dir == "data");
    CHECK(c.out_dir == "out");

    CHECK_NOTHROW(c.validate());
}

TEST_CASE("no file and no overrides reproduce the defaults") {
    SeedEnvGuard guard;
    RunConfig built = build_run_config("", {});
    CHECK(built.to_json() == RunConfig{}.to_json());
}

TEST_CASE("canonical json re-ingests to the same document") {
    SeedEnvGuard guard;
    RunConfig original = build_run_config(
        "", {"seed=17", "training.batch_size=32", "serving.weights=[2,1,0.5]",
             "generator.rho_conflict=0.25", "paths.out_dir=elsewhere"});
    const std::string dumped = original.to_json();
    CHECK(dumped.back() == '\n');
    CHECK(dumped.front() == '{');

    TempFile file("run_config_roundtrip.json", dumped);
    RunConfig reread = build_run_config(file.path, {});
    CHECK(reread.to_json() == dumped);
    CHECK(reread.seed == 17);
    CHECK(reread.batch_size == 32);
    CHECK(reread.weights.click == 1.0);
    CHECK(reread.out_dir == "elsewhere");
}

TEST_CASE("a partial file overrides only the keys it names") {
    SeedEnvGuard guard;
    TempFile file("run_config_partial.json", R"({
        "seed": 9,
        "training": {"learning_rate": 0.01, "structure": "off"},
        "generator": {"users": 40, "items": 30}
    })");
    RunConfig c = build_run_config(file.path, {});
    CHECK(c.seed == 9);
    CHECK(c.learning_rate == 0.01);
    CHECK(!c.structure);
    CHECK(c.generator.users == 40);
    CHECK(c.generator.items == 30);
    CHECK(c.batch_size == 256);
    CHECK(c.epochs == std::array<int, 3>{3, 2, 2});
    CHECK(c.data_dir == "data");
}

TEST_CASE("seed layering: overrides beat the environment beats the file") {
    SeedEnvGuard guard;
    TempFile file("run_config_seed.json", R"({"seed": 9})");

    CHECK(build_run_config(file.path, {}).seed == 9);

    setenv("CSMF_SEED", "42", 1);
    CHECK(build_run_config(file.path, {}).seed == 42);
    CHECK(build_run_config(file.path, {"seed=7"}).seed == 7);
    unsetenv("CSMF_SEED");
}

TEST_CASE("--set rewrites scalar and array leaves") {
    SeedEnvGuard guard;
    RunConfig c = build_run_config(
        "", {"training.batch_size=16", "training.structure=off", "training.mode=mixed_single",
             "training.prune_method=fixed_ratio", "training.prune_value=0.5",
             "training.margin_application=margin_subtraction", "serving.weights=[1,0,0]",
             "model.hidden_widths=[16,8]", "model.hidden_layouts=[[8,4,4],[4,2,2]]",
             "eval.cutoffs=[5,20]", "generator.rho_conflict=0.25", "paths.out_dir=alt"});
    CHECK(c.batch_size == 16);
    CHECK(!c.structure);
    CHECK(c.mode == PipelineMode::MixedSingle);
    CHECK(c.prune_method == PruneMethod::FixedRatio);
    CHECK(c.prune_value == 0.5);
    CHECK(c.margin.application == MarginApplication::MarginSubtraction);
    CHECK(c.weights.exposure == 1.0);
    CHECK(c.weights.click == 0.0);
    CHECK(c.weights.conversion == 0.0);
    CHECK(c.hidden_widths == std::vector<std::size_t>{16, 8});
    REQUIRE(c.hidden_layouts.size() == 2);
    CHECK(c.hidden_layouts[0] == csmf::BlockLayout{8, 4, 4});
    CHECK(c.hidden_layouts[1] == csmf::BlockLayout{4, 2, 2});
    CHECK(c.cutoffs == std::vector<std::size_t>{5, 20});
    CHECK(c.generator.rho_conflict == 0.25);
    CHECK(c.out_dir == "alt");
}

TEST_CASE("--set rejects unknown keys, sections, and type mismatches") {
    SeedEnvGuard guard;
    CHECK_THROWS_AS(build_run_config("", {"training.bogus=1"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"bogus=1"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"training=3"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"seed.inner=1"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"training.batch_size=fast"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"seed=[1]"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"training.batch_size"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"=5"}), ConfigError);
}

TEST_CASE("config file failures are typed by cause") {
    SeedEnvGuard guard;
    CHECK_THROWS_AS(build_run_config("no_such_config.json", {}), IoError);

    TempFile broken("run_config_broken.json", "{ nope");
    CHECK_THROWS_AS(build_run_config(broken.path, {}), ParseError);

    TempFile list("run_config_list.json", "[1, 2]");
    CHECK_THROWS_AS(build_run_config(list.path, {}), ConfigError);

    TempFile unknown("run_config_unknown.json", R"({"bogus": 1})");
    CHECK_THROWS_WITH_AS(build_run_config(unknown.path, {}),
                         doctest::Contains("unknown key \"bogus\""), ConfigError);

    TempFile nested("run_config_nested.json", R"({"training": {"bogus": 1}})");
    CHECK_THROWS_WITH_AS(build_run_config(nested.path, {}),
                         doctest::Contains("training.bogus"), ConfigError);

    TempFile typed("run_config_typed.json", R"({"training": {"batch_size": "big"}})");
    CHECK_THROWS_AS(build_run_config(typed.path, {}), ConfigError);
}

TEST_CASE("CSMF_SEED must be a non-negative integer") {
    SeedEnvGuard guard;
    setenv("CSMF_SEED", "abc", 1);
    CHECK_THROWS_AS(build_run_config("", {}), ConfigError);
    setenv("CSMF_SEED", "-3", 1);
    CHECK_THROWS_AS(build_run_config("", {}), ConfigError);
    setenv("CSMF_SEED", "3.5", 1);
    CHECK_THROWS_AS(build_run_config("", {}), ConfigError);
    setenv("CSMF_SEED", "0", 1);
    CHECK(build_run_config("", {}).seed == 0);
    unsetenv("CSMF_SEED");
}

TEST_CASE("semantic validation runs after assembly") {
    SeedEnvGuard guard;
    CHECK_THROWS_AS(build_run_config("", {"training.learning_rate=-1"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"training.prune_value=1.0"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"generator.click_rate=0"}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"paths.out_dir="}), ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"model.hidden_layouts=[[8,4,4],[4,2,2]]"}),
                    ConfigError);
    CHECK_THROWS_AS(build_run_config("", {"serving.weights=[0,0,0]"}), ConfigError);
}

TEST_CASE("derived specs mirror the document") {
    SeedEnvGuard guard;
    RunConfig c = build_run_config(
        "", {"seed=123", "generator.users=40", "generator.items=30", "eval.cutoffs=[10]"});

    csmf::GeneratorConfig gen = c.generator_config();
    CHECK(gen.seed == 123);
    CHECK(gen.users == 40);

    csmf::ModelSpec spec = c.model_spec();
    REQUIRE(spec.user.categoricals.size() == 1);
    CHECK(spec.user.categoricals[0].name == "user_id");
    CHECK(spec.user.categoricals[0].vocab == 40);
    CHECK(spec.user.categoricals[0].width == c.embedding_width);
    CHECK(spec.user.categoricals[0].layout == c.embedding_layout);
    CHECK(spec.user.dense_count == csmf::kGeneratedDenseCount);
    REQUIRE(spec.item.categoricals.size() == 1);
    CHECK(spec.item.categoricals[0].vocab == 30);
    CHECK(spec.hidden_widths == c.hidden_widths);
    CHECK(spec.final_layout == c.final_layout);
    CHECK(spec.structural == c.structure);

    csmf::PipelineConfig pipe = c.pipeline_config();
    CHECK(pipe.seed == 123);
    CHECK(pipe.epochs == c.epochs);
    CHECK(pipe.batch_size == c.batch_size);
    CHECK(pipe.learning_rate == c.learning_rate);
    CHECK(pipe.margin.conflict_gain == c.margin.conflict_gain);
    CHECK(pipe.mode == c.mode);
    CHECK(pipe.eval_cutoffs == c.cutoffs);
    CHECK(pipe.config_echo == c.to_json());

    csmf::EvalSpec eval = c.eval_spec();
    CHECK(eval.cutoffs == c.cutoffs);
    CHECK(eval.weights == c.weights);
}
