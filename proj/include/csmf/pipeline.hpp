#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csmf/data.hpp"
#include "csmf/eval.hpp"
#include "csmf/objectives.hpp"
#include "csmf/pruning.hpp"
#include "csmf/towers.hpp"

namespace csmf {

enum class PipelineMode : std::uint8_t {
    Csmf = 0,                 // exposure -> prune -> recover -> click -> ... -> conversion
    MixedSingle = 1,          // one model on the concatenated click+conversion streams
    SeparatePerObjective = 2, // one dense model per downstream objective
};

const char* mode_name(PipelineMode mode);
PipelineMode mode_from_name(const std::string& name);

struct PipelineConfig {
    ModelSpec model;
    std::array<int, kStageCount> epochs{3, 2, 2};
    std::size_t batch_size = 256;
    double learning_rate = 1e-4;
    PruneMethod prune_method = PruneMethod::CumulativePercentile;
    double prune_value = 0.75;
    MarginConfig margin;
    double recovery_fraction = 0.1;
    std::size_t max_negatives = 63;
    std::uint64_t seed = 1;
    PipelineMode mode = PipelineMode::Csmf;
    std::vector<std::size_t> eval_cutoffs{50};
    std::string config_echo; // opaque run-config document stored in checkpoints

    void validate() const;
};

/// Gradient (or moment) buffers aligned with a model's parameters.
struct ModelGrads {
    std::vector<Matrix> user_embeddings;
    std::vector<LayerGrads> user_layers;
    std::vector<Matrix> item_embeddings;
    std::vector<LayerGrads> item_layers;

    static ModelGrads like(const TwoTowerModel& model);
    void zero();
};

struct AdamState {
    ModelGrads m;
    ModelGrads v;
    std::int64_t step = 0;

    static AdamState like(const TwoTowerModel& model);
};

/// One optimizer step. Only parameters that are Trainable at a stage within
/// `prefix` move; a negative learning rate is a config error and a zero one
/// is a no-op. Moments are owned per training phase and never survive a
/// lifecycle transition.
void adam_step(TwoTowerModel& model, const ModelGrads& grads, AdamState& state, double lr,
               Stage prefix);

/// Forward + backward for one contrastive batch. Returns the summed loss and
/// accumulates parameter gradients into `grads` (which must be zeroed by the
/// caller). `loss_stage` selects the loss (exposure = plain sampled softmax,
/// later stages = adaptive-margin softmax with upstream margins),
/// `encode_prefix` the masked pass, `score_objective` the cumulative segment
/// dot the loss is applied to.
double batch_gradients(const TwoTowerModel& model, const ContrastiveBatch& batch,
                       Stage loss_stage, Stage encode_prefix, Stage score_objective,
                       const MarginConfig& margin, ModelGrads& grads);

struct NamedRngSnapshot {
    std::string name;
    std::uint64_t seed = 0;
    std::uint64_t position = 0;

    bool operator==(const NamedRngSnapshot&) const = default;
};

struct TrainStats {
    std::vector<double> epoch_losses; // mean loss per epoch
    std::size_t examples = 0;         // positives per epoch
    std::vector<NamedRngSnapshot> streams;
};

/// Train one stage's trainable parameters on the stage's positive view of
/// `records`. The exposure stage trains the full-width dot product (the whole
/// parameter space is still open); later stages train their serving score
/// under their stage prefix with upstream-derived margins.
TrainStats train_stage(TwoTowerModel& model, std::span<const RequestRecord> records, Stage stage,
                       const PipelineConfig& config);

/// Accuracy recovery: re-open exactly the parameters frozen by this stage's
/// commit, fine-tune them for one pass over `records` (already subsampled)
/// against the stage's serving score, then freeze them again.
TrainStats recover_stage(TwoTowerModel& model, std::span<const RequestRecord> records, Stage stage,
                         const PipelineConfig& config);

/// Narrow every parameter to 32-bit storage precision (idempotent). Applied
/// at stage boundaries so resumed and uninterrupted runs see identical bytes.
void quantize_to_storage(TwoTowerModel& model);

struct StageReport {
    Stage stage = Stage::Exposure;
    std::string role = "primary";
    std::size_t examples = 0;
    std::vector<double> epoch_losses;
    std::optional<TransitionReport> pruning;
    std::vector<double> recovery_losses;
    std::optional<MetricsReport> post_prune_metrics;
    std::optional<MetricsReport> post_recovery_metrics;

    std::string text() const;
};

struct RunReport {
    PipelineMode mode = PipelineMode::Csmf;
    std::vector<StageReport> stages;
    StateCensus final_census;

    std::string text() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointModel {
    std::string role; // "primary", "mixed", "click", "conversion"
    TwoTowerModel model;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    PipelineMode mode = PipelineMode::Csmf;
    bool structural = true;
    std::uint8_t stages_done = 0; // csmf: 1 after exposure, 2 after click, 3 complete
    bool complete = false;
    std::string config_echo;
    std::vector<NamedRngSnapshot> rng;
    std::vector<CheckpointModel> models;

    const TwoTowerModel& model_for(const std::string& role) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct RunOutputs {
    RunReport report;
    Checkpoint final_checkpoint;
    std::vector<Checkpoint> boundary_checkpoints; // csmf stage boundaries, in order
};

/// Execute the configured lifecycle on `train`, reporting boundary metrics
/// against `test`. When `out_dir` is nonempty a checkpoint file is written at
/// every stage boundary plus `checkpoint.bin` at the end.
RunOutputs run(const PipelineConfig& config, std::span<const RequestRecord> train,
               std::span<const RequestRecord> test, const std::string& out_dir = "");

/// Continue a partial csmf run from a stage-boundary checkpoint. The config
/// must describe the same run; remaining stages produce the same parameters,
/// metrics and final checkpoint bytes as the uninterrupted run.
RunOutputs resume(const Checkpoint& checkpoint, const PipelineConfig& config,
                  std::span<const RequestRecord> train, std::span<const RequestRecord> test,
                  const std::string& out_dir = "");

} // namespace csmf
