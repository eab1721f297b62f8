#include "csmf/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <unordered_map>

#include "csmf/errors.hpp"

namespace csmf {

RetrievalIndex build_index(const VectorSet& items) {
    if (items.vectors.rows != items.ids.size())
        throw ShapeError("index: id count does not match row count");
    std::unordered_set<std::int64_t> seen;
    for (std::int64_t id : items.ids)
        if (!seen.insert(id).second)
            throw DataError("index: duplicate item id " + std::to_string(id));
    return RetrievalIndex{items.ids, items.vectors};
}

TopkResult topk(std::span<const double> query, const RetrievalIndex& index, std::size_t k) {
    if (k == 0) throw ConfigError("topk: k must be positive");
    if (index.rows.rows > 0 && query.size() != index.rows.cols)
        throw ShapeError("topk: query width does not match index width");

    TopkResult out;
    if (k > index.size()) {
        k = index.size();
        out.truncated = true;
    }
    std::vector<double> scores(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        double s = 0.0;
        const auto row = index.rows.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) s += query[i] * row[i];
        scores[r] = s;
    }
    std::vector<std::size_t> order(index.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.ids[a] < index.ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      better);
    out.ids.reserve(k);
    out.scores.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.ids.push_back(index.ids[order[i]]);
        out.scores.push_back(scores[order[i]]);
    }
    return out;
}

double recall_at_n(std::span<const std::int64_t> ranked, const RelevantSet& relevant,
                   std::size_t n) {
    if (n == 0) throw ConfigError("recall: N must be positive");
    if (relevant.empty()) throw DataError("recall: empty relevant set");
    const std::size_t top = std::min(n, ranked.size());
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top; ++r) hits += relevant.count(ranked[r]);
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_n(std::span<const std::int64_t> ranked, const RelevantSet& relevant,
                 std::size_t n) {
    if (n == 0) throw ConfigError("ndcg: N must be positive");
    if (relevant.empty()) throw DataError("ndcg: empty relevant set");
    const std::size_t top = std::min(n, ranked.size());
    double dcg = 0.0;
    for (std::size_t r = 0; r < top; ++r)
        if (relevant.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    const std::size_t ideal = std::min(relevant.size(), n);
    double idcg = 0.0;
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

void EvalSpec::validate() const {
    if (cutoffs.empty()) throw ConfigError("eval: at least one cutoff required");
    for (std::size_t n : cutoffs)
        if (n == 0) throw ConfigError("eval: cutoffs must be positive");
    weights.validate();
}

double MetricsReport::get(const std::string& objective, std::size_t n,
                          const std::string& metric) const {
    for (const MetricRow& row : rows)
        if (row.objective == objective && row.n == n && row.metric == metric) return row.value;
    throw Error("metrics report has no row (" + objective + ", " + std::to_string(n) + ", " +
                metric + ")");
}

std::string MetricsReport::table() const {
    std::string out = "objective     N    metric  value     users  skipped\n";
    char buf[128];
    for (const MetricRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-12s %4zu  %-6s  %.6f  %5zu  %7zu\n",
                      row.objective.c_str(), row.n, row.metric.c_str(), row.value, row.users,
                      row.skipped);
        out += buf;
    }
    return out;
}

EntityCatalog harvest_entities(std::span<const RequestRecord> catalog,
                               std::span<const RequestRecord> users_from) {
    EntityCatalog h;
    std::map<std::int64_t, EntityRef> items;
    for (const RequestRecord& rec : catalog) {
        for (const ItemEvent& item : rec.exposed)
            items.emplace(item.id, EntityRef(item.dense, item.cats));
        for (const ItemEvent& item : rec.unexposed)
            items.emplace(item.id, EntityRef(item.dense, item.cats));
    }
    std::map<std::int64_t, EntityRef> users;
    for (const RequestRecord& rec : users_from)
        users.emplace(rec.user_id, EntityRef(rec.user_dense, rec.user_cats));
    for (const auto& [id, ref] : users) h.users.push_back(KeyedEntity{id, ref});
    for (const auto& [id, ref] : items) h.items.push_back(KeyedEntity{id, ref});
    return h;
}

namespace {

using RelevantByUser = std::unordered_map<std::int64_t, RelevantSet>;

RelevantByUser relevant_sets(std::span<const RequestRecord> test, Stage stage) {
    RelevantByUser by_user;
    for (const RequestRecord& rec : test) {
        for (const ItemEvent& item : rec.exposed) {
            const bool hit = stage == Stage::Exposure || (stage == Stage::Click && item.clicked) ||
                             (stage == Stage::Conversion && item.converted);
            if (hit) by_user[rec.user_id].insert(item.id);
        }
    }
    return by_user;
}

struct Objective {
    std::string name;
    const RelevantByUser* relevant;
};

MetricsReport score_users(const std::vector<std::int64_t>& user_ids, const Matrix& user_vectors,
                          const RetrievalIndex& index, std::span<const Objective> objectives,
                          std::span<const std::size_t> cutoffs) {
    std::size_t max_n = 0;
    for (std::size_t n : cutoffs) max_n = std::max(max_n, n);

    struct Accum {
        double recall = 0.0;
        double ndcg = 0.0;
    };
    std::vector<std::vector<Accum>> sums(objectives.size(),
                                         std::vector<Accum>(cutoffs.size()));
    std::vector<std::size_t> evaluated(objectives.size(), 0), skipped(objectives.size(), 0);

    for (std::size_t u = 0; u < user_ids.size(); ++u) {
        TopkResult ranked;
        bool ranked_ready = false;
        for (std::size_t o = 0; o < objectives.size(); ++o) {
            auto it = objectives[o].relevant->find(user_ids[u]);
            if (it == objectives[o].relevant->end() || it->second.empty()) {
                ++skipped[o];
                continue;
            }
            if (!ranked_ready) {
                ranked = topk(user_vectors.row(u), index, max_n);
                ranked_ready = true;
            }
            ++evaluated[o];
            for (std::size_t c = 0; c < cutoffs.size(); ++c) {
                sums[o][c].recall += recall_at_n(ranked.ids, it->second, cutoffs[c]);
                sums[o][c].ndcg += ndcg_at_n(ranked.ids, it->second, cutoffs[c]);
            }
        }
    }

    MetricsReport report;
    for (std::size_t o = 0; o < objectives.size(); ++o) {
        const double denom = evaluated[o] > 0 ? static_cast<double>(evaluated[o]) : 1.0;
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
            report.rows.push_back(MetricRow{objectives[o].name, cutoffs[c], "recall",
                                            sums[o][c].recall / denom, evaluated[o], skipped[o]});
            report.rows.push_back(MetricRow{objectives[o].name, cutoffs[c], "ndcg",
                                            sums[o][c].ndcg / denom, evaluated[o], skipped[o]});
        }
    }
    return report;
}

Matrix encode_entities(const TwoTowerModel& model, Side side,
                       const std::vector<KeyedEntity>& entities, Stage prefix) {
    std::vector<EntityRef> refs;
    refs.reserve(entities.size());
    for (const KeyedEntity& e : entities) refs.push_back(e.features);
    return encode_batch(tower_of(model, side), refs, prefix, model.structural, nullptr);
}

} // namespace

MetricsReport evaluate(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                       std::span<const RequestRecord> test, const EvalSpec& spec) {
    spec.validate();
    const EntityCatalog h = harvest_entities(catalog, test);
    const ServingExport exported = export_serving_vectors(model, h.users, h.items, spec.weights);
    const RetrievalIndex index = build_index(exported.items);

    const RelevantByUser clicked = relevant_sets(test, Stage::Click);
    const RelevantByUser converted = relevant_sets(test, Stage::Conversion);
    const Objective objectives[] = {{"click", &clicked}, {"conversion", &converted}};
    MetricsReport report =
        score_users(exported.users.ids, exported.users.vectors, index, objectives, spec.cutoffs);

    std::size_t evaluated = 0;
    for (const MetricRow& row : report.rows) evaluated += row.users;
    if (evaluated == 0) throw DataError("evaluate: no evaluable users in the test window");
    return report;
}

MetricsReport stage_metrics(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                            std::span<const RequestRecord> test, Stage stage,
                            std::span<const std::size_t> cutoffs) {
    if (cutoffs.empty()) throw ConfigError("eval: at least one cutoff required");
    const EntityCatalog h = harvest_entities(catalog, test);
    // Prefix-masked vectors zero every coordinate past the stage's segment, so
    // the full-width dot product is exactly the stage's serving score.
    VectorSet items{.ids = {}, .vectors = encode_entities(model, Side::Item, h.items, stage)};
    for (const KeyedEntity& e : h.items) items.ids.push_back(e.id);
    const RetrievalIndex index = build_index(items);
    Matrix user_vectors = encode_entities(model, Side::User, h.users, stage);
    std::vector<std::int64_t> user_ids;
    for (const KeyedEntity& e : h.users) user_ids.push_back(e.id);

    const RelevantByUser relevant = relevant_sets(test, stage);
    const Objective objectives[] = {{stage_name(stage), &relevant}};
    return score_users(user_ids, user_vectors, index, objectives, cutoffs);
}

std::string WeightSweepResult::table() const {
    std::string out = "k_d     k_o     k_r     objective     N    metric  value\n";
    char buf[160];
    for (const SweepRow& row : rows) {
        for (const MetricRow& m : row.metrics.rows) {
            std::snprintf(buf, sizeof(buf), "%-7.3f %-7.3f %-7.3f %-12s %4zu  %-6s  %.6f\n",
                          row.weights.exposure, row.weights.click, row.weights.conversion,
                          m.objective.c_str(), m.n, m.metric.c_str(), m.value);
            out += buf;
        }
    }
    return out;
}

WeightSweepResult weight_sweep(const TwoTowerModel& model, std::span<const RequestRecord> catalog,
                               std::span<const RequestRecord> test,
                               std::span<const ServingWeights> grid,
                               std::span<const std::size_t> cutoffs) {
    if (grid.empty()) throw ConfigError("sweep: empty weight grid");
    if (!model.training_complete)
        throw LifecycleError("sweep: model training is not complete");
    const std::uint64_t digest_before = value_digest(model);

    const EntityCatalog h = harvest_entities(catalog, test);
    VectorSet items{.ids = {}, .vectors = encode_entities(model, Side::Item, h.items,
                                                          Stage::Conversion)};
    for (const KeyedEntity& e : h.items) items.ids.push_back(e.id);
    const RetrievalIndex index = build_index(items);

    const Matrix raw_users = encode_entities(model, Side::User, h.users, Stage::Conversion);
    std::vector<std::int64_t> user_ids;
    for (const KeyedEntity& e : h.users) user_ids.push_back(e.id);

    const RelevantByUser clicked = relevant_sets(test, Stage::Click);
    const RelevantByUser converted = relevant_sets(test, Stage::Conversion);
    const Objective objectives[] = {{"click", &clicked}, {"conversion", &converted}};

    WeightSweepResult out;
    out.item_exports = 1;
    const BlockLayout& layout = model.final_layout;
    for (const ServingWeights& weights : grid) {
        weights.validate();
        Matrix scaled = raw_users;
        const std::array<double, kStageCount> scales = weights.segment_scales();
        for (std::size_t r = 0; r < scaled.rows; ++r) {
            auto row = scaled.row(r);
            for (Stage s : kStages) {
                const std::size_t off = layout.offset(s);
                for (std::size_t i = 0; i < layout.size(s); ++i)
                    row[off + i] *= scales[stage_index(s)];
            }
        }
        ++out.user_exports;
        out.rows.push_back(
            SweepRow{weights, score_users(user_ids, scaled, index, objectives, cutoffs)});
    }
    out.params_stable = value_digest(model) == digest_before;
    return out;
}

ScanBenchmark scan_benchmark(const RetrievalIndex& index, const Matrix& queries,
                             std::size_t repeats) {
    if (repeats == 0) throw ConfigError("benchmark: repeats must be positive");
    if (queries.rows == 0) throw ConfigError("benchmark: at least one query required");
    if (queries.cols != index.rows.cols)
        throw ShapeError("benchmark: query width does not match index width");

    ScanBenchmark bench;
    bench.items = index.size();
    bench.queries = queries.rows;
    bench.repeats = repeats;
    const auto start = std::chrono::steady_clock::now();
    double checksum = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
        for (std::size_t q = 0; q < queries.rows; ++q) {
            const auto query = queries.row(q);
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < index.size(); ++r) {
                const auto row = index.rows.row(r);
                double s = 0.0;
                for (std::size_t i = 0; i < row.size(); ++i) s += query[i] * row[i];
                best = std::max(best, s);
            }
            checksum += best;
        }
    }
    const auto end = std::chrono::steady_clock::now();
    bench.seconds = std::chrono::duration<double>(end - start).count();
    bench.checksum = checksum;
    const double scanned = static_cast<double>(bench.items) * static_cast<double>(bench.queries) *
                           static_cast<double>(repeats);
    bench.items_per_second = bench.seconds > 0.0 ? scanned / bench.seconds : 0.0;
    return bench;
}

} // namespace csmf
