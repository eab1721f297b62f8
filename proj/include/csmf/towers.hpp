#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csmf/masked_layer.hpp"
#include "csmf/matrix.hpp"
#include "csmf/param_state.hpp"
#include "csmf/stage.hpp"

namespace csmf {

struct CategoricalFeatureSpec {
    std::string name;
    std::size_t vocab = 0;
    std::size_t width = 0;
    BlockLayout layout; // partition of the embedding coordinates
};

struct TowerSpec {
    std::vector<CategoricalFeatureSpec> categoricals;
    std::size_t dense_count = 0;
};

struct ModelSpec {
    TowerSpec user;
    TowerSpec item;
    std::vector<std::size_t> hidden_widths;
    std::vector<BlockLayout> hidden_layouts; // one per hidden layer
    BlockLayout final_layout;
    double init_scale = 0.05;
    bool structural = true;

    void validate() const;
};

/// One categorical feature's embedding table. Rows are vocabulary entries,
/// columns carry stage blocks like layer units, and every cell has its own
/// lifecycle state.
struct EmbeddingTable {
    std::string name;
    Matrix table; // vocab x width
    std::vector<ParamState> state;
    BlockLayout layout;

    ParamState& cell_state(std::size_t row, std::size_t col) {
        return state[row * table.cols + col];
    }
    const ParamState& cell_state(std::size_t row, std::size_t col) const {
        return state[row * table.cols + col];
    }
};

struct Tower {
    std::vector<EmbeddingTable> embeddings;
    std::size_t dense_count = 0;
    std::vector<Stage> input_stages; // concat(embedding coords..., dense coords)
    std::vector<MaskedLayer> layers;

    std::size_t input_width() const { return input_stages.size(); }
    std::size_t output_width() const { return layers.back().out_width(); }
};

/// The full parameter store: two towers sharing a final vector layout, plus
/// the lifecycle progress markers.
struct TwoTowerModel {
    Tower user;
    Tower item;
    BlockLayout final_layout;
    bool structural = true;
    std::array<bool, kStageCount> stage_committed{false, false, false};
    std::array<bool, kStageCount> stage_recovered{false, false, false};
    bool training_complete = false;
};

enum class Side : std::uint8_t { User = 0, Item = 1 };

/// Features of one entity. `cats` holds one id list per categorical feature
/// (multi-valued features are sum-pooled).
struct EntityFeatures {
    std::vector<double> dense;
    std::vector<std::vector<std::int64_t>> cats;
};

/// Borrowed view used on hot paths to avoid copying feature payloads.
struct EntityRef {
    const std::vector<double>* dense = nullptr;
    const std::vector<std::vector<std::int64_t>>* cats = nullptr;

    EntityRef() = default;
    EntityRef(const std::vector<double>& d, const std::vector<std::vector<std::int64_t>>& c)
        : dense(&d), cats(&c) {}
    explicit EntityRef(const EntityFeatures& f) : dense(&f.dense), cats(&f.cats) {}
};

TwoTowerModel build_model(const ModelSpec& spec, RngStream& rng);

const Tower& tower_of(const TwoTowerModel& model, Side side);
Tower& tower_of(TwoTowerModel& model, Side side);

/// Intermediate activations kept for the backward pass.
struct TowerTrace {
    Matrix input;
    std::vector<Matrix> activations; // one per layer, last is the output
};

/// Embed + concat + run the MLP under a stage prefix. Output coordinates in
/// blocks beyond the prefix are exactly 0.
std::vector<double> encode(const TwoTowerModel& model, Side side, const EntityFeatures& features,
                           Stage active_prefix);
Matrix encode_batch(const Tower& tower, const std::vector<EntityRef>& entities,
                    Stage active_prefix, bool structural, TowerTrace* trace = nullptr);

/// Cumulative segment dot product: exposure reads the first block, click the
/// first two, conversion all of them.
double score(std::span<const double> user_vec, std::span<const double> item_vec, Stage objective,
             const BlockLayout& layout);

/// Per-stage scores from three independently prefix-masked passes.
std::array<double, kStageCount> stage_scores(const TwoTowerModel& model,
                                             const EntityFeatures& user,
                                             const EntityFeatures& item);

struct ServingWeights {
    double exposure = 1.0;
    double click = 1.8;
    double conversion = 1.2;

    /// Per-segment multipliers for the user vector. Scaling segment s by the
    /// sum of the weights of stage s and everything after it makes one fused
    /// dot product equal the weighted sum of the per-stage scores.
    std::array<double, kStageCount> segment_scales() const {
        return {exposure + click + conversion, click + conversion, conversion};
    }
    void validate() const; // ConfigError unless all >= 0 and at least one > 0

    bool operator==(const ServingWeights&) const = default;
};

/// Full-prefix user vector with segment scales applied.
std::vector<double> weighted_user_vector(const TwoTowerModel& model, const EntityFeatures& user,
                                         const ServingWeights& weights);

struct VectorSet {
    std::vector<std::int64_t> ids;
    Matrix vectors;
};

struct ServingExport {
    VectorSet users; // segment-scaled
    VectorSet items; // raw
};

struct KeyedEntity {
    std::int64_t id = 0;
    EntityRef features;
};

/// Requires a fully trained model. User vectors carry the segment scales so
/// retrieval is a single unweighted dot product against raw item vectors.
ServingExport export_serving_vectors(const TwoTowerModel& model,
                                     const std::vector<KeyedEntity>& users,
                                     const std::vector<KeyedEntity>& items,
                                     const ServingWeights& weights);

/// Visit every parameter (embeddings, weights, biases) of both towers in a
/// fixed order: user tower then item tower; per tower embeddings then layers;
/// row-major values, layer bias after its weights.
void visit_params(const TwoTowerModel& model,
                  const std::function<void(double, const ParamState&)>& fn);
void visit_params(TwoTowerModel& model, const std::function<void(double&, ParamState&)>& fn);

/// Digest of every parameter value, in visit order.
std::uint64_t value_digest(const TwoTowerModel& model);
/// Digest of the values currently in one lifecycle state.
std::uint64_t state_digest(const TwoTowerModel& model, ParamKind kind, Stage stage);

/// Counts of parameters per lifecycle state.
struct StateCensus {
    std::array<std::size_t, kStageCount> trainable{};
    std::array<std::size_t, kStageCount> frozen{};
    std::size_t structural_zero = 0;
    std::size_t zero_locked = 0;

    std::size_t total() const;
    std::size_t total_trainable() const;
};

StateCensus census(const TwoTowerModel& model);

/// Vector file: text header "csmf-vectors v1 <width> <exposure> <click>
/// <conversion>\n", then one record per entity of a little-endian int64 id
/// followed by <width> little-endian 32-bit floats.
void write_vector_file(const std::string& path, const VectorSet& set, const BlockLayout& layout);
struct VectorFile {
    VectorSet set;
    BlockLayout layout;
};
VectorFile read_vector_file(const std::string& path);

} // namespace csmf
