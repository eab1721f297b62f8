#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "csmf/data.hpp"
#include "csmf/towers.hpp"

namespace csmf {

/// Contiguous item matrix for the exact scan.
struct RetrievalIndex {
    std::vector<std::int64_t> ids;
    Matrix rows; // items x width

    std::size_t size() const { return ids.size(); }
};

RetrievalIndex build_index(const VectorSet& items); // ShapeError / DataError on bad input

struct TopkResult {
    std::vector<std::int64_t> ids; // descending score, ties by ascending id
    std::vector<double> scores;
    bool truncated = false; // k exceeded the index size
};

TopkResult topk(std::span<const double> query, const RetrievalIndex& index, std::size_t k);

using RelevantSet = std::unordered_set<std::int64_t>;

double recall_at_n(std::span<const std::int64_t> ranked, const RelevantSet& relevant,
                   std::size_t n);
/// Binary-gain nDCG: DCG over relevant hits at 1/log2(rank+1), ideal DCG over
/// min(|relevant|, n) top ranks.
double ndcg_at_n(std::span<const std::int64_t> ranked, const RelevantSet& relevant, std::size_t n);

struct EvalSpec {
    std::vector<std::size_t> cutoffs{50};
    ServingWeights weights;

    void validate() const;
};

struct MetricRow {
    std::string objective;
    std::size_t n = 0;
    std::string metric;
    double value = 0.0;
    std::size_t users = 0;   // users evaluated
    std::size_t skipped = 0; // users without relevant items

    bool operator==(const MetricRow&) const = default;
};

struct MetricsReport {
    std::vector<MetricRow> rows;

    double get(const std::string& objective, std::size_t n, const std::string& metric) const;
    std::string table() const;

    bool operator==(const MetricsReport&) const = default;
};

/// Full retrieval evaluation of a trained model: vectors exported with the
/// spec's weights, index over every item appearing in `catalog`, per-user
/// metrics averaged over test users with nonempty relevant sets. Relevance is
/// the user's test-window clicked items (objective "click") and converted
/// items (objective "conversion").
MetricsReport evaluate(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                       std::span<const RequestRecord> test, const EvalSpec& spec);

/// Mid-lifecycle single-stage evaluation: ranks by the stage's serving score
/// (prefix dot product) and takes the stage's own positives as relevant.
/// Usable on incomplete models, e.g. before/after accuracy recovery.
MetricsReport stage_metrics(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                            std::span<const RequestRecord> test, Stage stage,
                            std::span<const std::size_t> cutoffs);

/// Borrowed feature store: items from every record of `catalog` (exposed and
/// unexposed, first occurrence wins), users from `users_from`; each sorted
/// ascending by id. The records must outlive the result.
struct EntityCatalog {
    std::vector<KeyedEntity> users;
    std::vector<KeyedEntity> items;
};

EntityCatalog harvest_entities(std::span<const RequestRecord> catalog,
                               std::span<const RequestRecord> users_from);

struct SweepRow {
    ServingWeights weights;
    MetricsReport metrics;
};

struct WeightSweepResult {
    std::vector<SweepRow> rows;
    std::size_t user_exports = 0; // one per grid point
    std::size_t item_exports = 0; // item vectors are weight-independent
    bool params_stable = false;   // value digest unchanged across the sweep

    std::string table() const;
};

/// Serving-weight sweep over one trained model. No retraining happens: item
/// vectors are exported once and user vectors are rescaled per grid point,
/// which is verified by digesting every parameter before and after.
WeightSweepResult weight_sweep(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                               std::span<const RequestRecord> test,
                               std::span<const ServingWeights> grid,
                               std::span<const std::size_t> cutoffs);

struct ScanBenchmark {
    std::size_t items = 0;
    std::size_t queries = 0;
    std::size_t repeats = 0;
    double seconds = 0.0;
    double items_per_second = 0.0;
    double checksum = 0.0; // defeats dead-code elimination; also a determinism probe
};

ScanBenchmark scan_benchmark(const RetrievalIndex& index, const Matrix& queries,
                             std::size_t repeats);

} // namespace csmf
