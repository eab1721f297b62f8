#include <doctest.h>

#include <cmath>
#include <vector>

#include "csmf/data.hpp"
#include "csmf/errors.hpp"
#include "csmf/eval.hpp"
#include "csmf/rng.hpp"
#include "csmf/towers.hpp"
#include "support/oracles.hpp"

using csmf::BlockLayout;
using csmf::GeneratorConfig;
using csmf::Matrix;
using csmf::RelevantSet;
using csmf::RetrievalIndex;
using csmf::RngStream;
using csmf::ServingWeights;
using csmf::Stage;
using csmf::VectorSet;

namespace {

RetrievalIndex random_index(std::size_t items, std::size_t width, std::uint64_t seed) {
    RngStream rng(seed);
    VectorSet set;
    set.vectors = csmf::gaussian_init(rng, items, width, 1.0);
    for (std::size_t i = 0; i < items; ++i)
        set.ids.push_back(static_cast<std::int64_t>(items - i)); // unsorted ids
    return csmf::build_index(set);
}

} // namespace

TEST_CASE("topk matches the brute-force scan oracle") {
    RngStream rng(51);
    const RetrievalIndex index = random_index(200, 8, 52);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> query(8);
        for (double& q : query) q = rng.next_gaussian();
        for (const std::size_t k : {std::size_t{1}, std::size_t{10}, std::size_t{200}}) {
            const csmf::TopkResult got = csmf::topk(query, index, k);
            std::vector<double> scores(index.size());
            for (std::size_t i = 0; i < index.size(); ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < 8; ++c) s += query[c] * index.rows(i, c);
                scores[i] = s;
            }
            const std::vector<std::int64_t> want = oracles::naive_topk(scores, index.ids, k);
            CHECK(got.ids == want);
            CHECK_FALSE(got.truncated);
            for (std::size_t i = 0; i + 1 < got.scores.size(); ++i)
                CHECK(got.scores[i] >= got.scores[i + 1]);
        }
    }
}

TEST_CASE("topk breaks score ties by ascending id and reports truncation") {
    VectorSet set;
    set.ids = {30, 10, 20, 40};
    set.vectors = Matrix(4, 1);
    set.vectors(0, 0) = 1.0;
    set.vectors(1, 0) = 1.0;
    set.vectors(2, 0) = 1.0;
    set.vectors(3, 0) = 2.0;
    const RetrievalIndex index = csmf::build_index(set);

    const std::vector<double> query{1.0};
    const csmf::TopkResult r = csmf::topk(query, index, 3);
    CHECK(r.ids == std::vector<std::int64_t>{40, 10, 20});

    const csmf::TopkResult all = csmf::topk(query, index, 10);
    CHECK(all.ids == std::vector<std::int64_t>{40, 10, 20, 30});
    CHECK(all.truncated);
}

TEST_CASE("index construction rejects inconsistent input") {
    VectorSet bad;
    bad.ids = {1, 2};
    bad.vectors = Matrix(3, 2);
    CHECK_THROWS_AS(csmf::build_index(bad), csmf::ShapeError);

    VectorSet dup;
    dup.ids = {1, 1};
    dup.vectors = Matrix(2, 2);
    CHECK_THROWS_AS(csmf::build_index(dup), csmf::DataError);

    const RetrievalIndex index = random_index(4, 3, 53);
    CHECK_THROWS_AS(csmf::topk(std::vector<double>{1.0}, index, 2), csmf::ShapeError);
}

TEST_CASE("recall and ndcg on hand-computed rankings") {
    const std::vector<std::int64_t> ranked{7, 3, 9, 5};
    const RelevantSet relevant{3, 5};

    CHECK(csmf::recall_at_n(ranked, relevant, 1) == doctest::Approx(0.0));
    CHECK(csmf::recall_at_n(ranked, relevant, 2) == doctest::Approx(0.5));
    CHECK(csmf::recall_at_n(ranked, relevant, 4) == doctest::Approx(1.0));

    // Single relevant item at rank 2: nDCG = 1/log2(3).
    const RelevantSet one{3};
    CHECK(csmf::ndcg_at_n(ranked, one, 4) ==
          doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));

    // Both relevant at ranks 2 and 4 against an ideal of ranks 1 and 2.
    const double dcg = 1.0 / std::log2(3.0) + 1.0 / std::log2(5.0);
    const double idcg = 1.0 + 1.0 / std::log2(3.0);
    CHECK(csmf::ndcg_at_n(ranked, relevant, 4) == doctest::Approx(dcg / idcg).epsilon(1e-12));

    // Perfect ranking scores 1 under both metrics.
    const std::vector<std::int64_t> perfect{3, 5, 7, 9};
    CHECK(csmf::recall_at_n(perfect, relevant, 2) == doctest::Approx(1.0));
    CHECK(csmf::ndcg_at_n(perfect, relevant, 2) == doctest::Approx(1.0));
}

TEST_CASE("entity harvesting keeps first occurrences sorted by id") {
    GeneratorConfig cfg;
    cfg.users = 30;
    cfg.items = 40;
    cfg.seed = 9;
    const csmf::GeneratedData data = csmf::generate(cfg);

    const csmf::EntityCatalog catalog = csmf::harvest_entities(data.train, data.test);
    REQUIRE_FALSE(catalog.items.empty());
    REQUIRE_FALSE(catalog.users.empty());
    for (std::size_t i = 1; i < catalog.items.size(); ++i)
        CHECK(catalog.items[i - 1].id < catalog.items[i].id);
    for (std::size_t i = 1; i < catalog.users.size(); ++i)
        CHECK(catalog.users[i - 1].id < catalog.users[i].id);

    // Every item id referenced by the catalog records appears exactly once.
    std::size_t distinct = 0;
    {
        std::unordered_set<std::int64_t> ids;
        for (const auto& r : data.train) {
            for (const auto& e : r.exposed) ids.insert(e.id);
            for (const auto& e : r.unexposed) ids.insert(e.id);
        }
        distinct = ids.size();
    }
    CHECK(catalog.items.size() == distinct);
}

TEST_CASE("full evaluation averages per-user metrics over test users") {
    GeneratorConfig cfg;
    cfg.users = 60;
    cfg.items = 50;
    cfg.seed = 10;
    const csmf::GeneratedData data = csmf::generate(cfg);

    csmf::ModelSpec spec;
    spec.user.categoricals = {{"user_id", cfg.users, 8, BlockLayout(4, 2, 2)}};
    spec.user.dense_count = csmf::kGeneratedDenseCount;
    spec.item.categoricals = {{"item_id", cfg.items, 8, BlockLayout(4, 2, 2)}};
    spec.item.dense_count = csmf::kGeneratedDenseCount;
    spec.hidden_widths = {16};
    spec.hidden_layouts = {BlockLayout(8, 4, 4)};
    spec.final_layout = BlockLayout(4, 2, 2);
    RngStream rng(54);
    csmf::TwoTowerModel model = csmf::build_model(spec, rng);
    model.training_complete = true;

    csmf::EvalSpec eval_spec;
    eval_spec.cutoffs = {5, 20};
    const csmf::MetricsReport report = csmf::evaluate(model, data.train, data.test, eval_spec);

    // Two objectives x two cutoffs x two metrics.
    CHECK(report.rows.size() == 8);
    for (const csmf::MetricRow& row : report.rows) {
        CHECK(row.value >= 0.0);
        CHECK(row.value <= 1.0);
        CHECK(row.users > 0);
    }
    CHECK_NOTHROW(report.get("click", 5, "recall"));
    CHECK_NOTHROW(report.get("conversion", 20, "ndcg"));
    CHECK_THROWS_AS(report.get("click", 7, "recall"), csmf::Error);
    CHECK_FALSE(report.table().empty());

    // Deterministic: evaluating twice gives identical rows.
    CHECK(csmf::evaluate(model, data.train, data.test, eval_spec) == report);

    const csmf::MetricsReport stage_report =
        csmf::stage_metrics(model, data.train, data.test, Stage::Exposure,
                            std::vector<std::size_t>{10});
    REQUIRE_FALSE(stage_report.rows.empty());
    for (const csmf::MetricRow& row : stage_report.rows) CHECK(row.users > 0);
}

TEST_CASE("weight sweeps rescale vectors without touching parameters") {
    GeneratorConfig cfg;
    cfg.users = 40;
    cfg.items = 30;
    cfg.seed = 11;
    const csmf::GeneratedData data = csmf::generate(cfg);

    csmf::ModelSpec spec;
    spec.user.categoricals = {{"user_id", cfg.users, 4, BlockLayout(2, 1, 1)}};
    spec.user.dense_count = csmf::kGeneratedDenseCount;
    spec.item.categoricals = {{"item_id", cfg.items, 4, BlockLayout(2, 1, 1)}};
    spec.item.dense_count = csmf::kGeneratedDenseCount;
    spec.hidden_widths = {8};
    spec.hidden_layouts = {BlockLayout(4, 2, 2)};
    spec.final_layout = BlockLayout(2, 1, 1);
    RngStream rng(55);
    csmf::TwoTowerModel model = csmf::build_model(spec, rng);
    model.training_complete = true;

    std::vector<ServingWeights> grid;
    for (const double o : {0.5, 1.0, 1.8})
        for (const double r : {0.6, 1.2}) grid.push_back(ServingWeights{1.0, o, r});

    const csmf::WeightSweepResult sweep = csmf::weight_sweep(
        model, data.train, data.test, grid, std::vector<std::size_t>{10});
    CHECK(sweep.rows.size() == grid.size());
    CHECK(sweep.user_exports == grid.size());
    CHECK(sweep.item_exports == 1);
    CHECK(sweep.params_stable);
    CHECK_FALSE(sweep.table().empty());
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(sweep.rows[i].weights == grid[i]);
}

TEST_CASE("the exact scan benchmark is deterministic") {
    const RetrievalIndex index = random_index(100, 6, 56);
    RngStream rng(57);
    const Matrix queries = csmf::gaussian_init(rng, 10, 6, 1.0);

    const csmf::ScanBenchmark a = csmf::scan_benchmark(index, queries, 3);
    const csmf::ScanBenchmark b = csmf::scan_benchmark(index, queries, 3);
    CHECK(a.items == 100);
    CHECK(a.queries == 10);
    CHECK(a.repeats == 3);
    CHECK(a.checksum == b.checksum);
    CHECK(a.seconds > 0.0);
    CHECK(a.items_per_second > 0.0);

    CHECK_THROWS_AS(csmf::scan_benchmark(index, Matrix(2, 3), 1), csmf::ShapeError);
}
