#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csmf/data.hpp"
#include "csmf/eval.hpp"
#include "csmf/pipeline.hpp"

namespace csmf {

/// Everything a run needs, described by one JSON document with sections
/// generator / model / training / serving / eval / paths plus a top-level
/// seed that drives both data generation and training. Every field has a
/// default; unknown keys anywhere in the document are rejected.
struct RunConfig {
    std::uint64_t seed = 1;
    GeneratorConfig generator;

    std::size_t embedding_width = 8;
    BlockLayout embedding_layout{4, 2, 2};
    std::vector<std::size_t> hidden_widths{128, 64};
    std::vector<BlockLayout> hidden_layouts{BlockLayout{64, 32, 32}, BlockLayout{32, 16, 16}};
    BlockLayout final_layout{32, 16, 16};
    double init_scale = 0.05;
    bool structure = true;

    PipelineMode mode = PipelineMode::Csmf;
    std::array<int, kStageCount> epochs{3, 2, 2};
    std::size_t batch_size = 256;
    double learning_rate = 1e-4;
    PruneMethod prune_method = PruneMethod::CumulativePercentile;
    double prune_value = 0.75;
    MarginConfig margin;
    double recovery_fraction = 0.1;
    std::size_t max_negatives = 63;

    ServingWeights weights;
    std::vector<std::size_t> cutoffs{50};

    std::string data_dir = "data";
    std::string out_dir = "out";

    void validate() const;

    /// Canonical form (sorted keys, two-space indent); also the checkpoint
    /// config echo, so byte equality means "same run".
    std::string to_json() const;

    /// Towers derived from the generator shape: one id embedding per side
    /// sized by the configured vocabularies, plus the generated dense slots.
    ModelSpec model_spec() const;
    GeneratorConfig generator_config() const; // generator stamped with the run seed
    PipelineConfig pipeline_config() const;
    EvalSpec eval_spec() const;
};

/// Layered assembly: defaults, then the optional JSON file, then the
/// CSMF_SEED environment variable, then `--set dotted.path=value` overrides
/// in order. Each override path must name an existing scalar or array leaf;
/// values parse as JSON where possible and fall back to bare strings.
RunConfig build_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides);

} // namespace csmf
