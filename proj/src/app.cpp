#include "csmf/app.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csmf/errors.hpp"

namespace csmf {

namespace {

std::string join(const std::string& dir, const char* name) {
    return (std::filesystem::path(dir) / name).string();
}

std::string summary_line(const char* split, const DatasetSummary& s) {
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "%-5s requests=%zu exposures=%zu clicks=%zu conversions=%zu users=%zu "
                  "items=%zu\n",
                  split, s.requests, s.exposures, s.clicks, s.conversions, s.users, s.items);
    return buf;
}

const TwoTowerModel& primary_model(const Checkpoint& ck) { return ck.model_for("primary"); }

Checkpoint load_run_checkpoint(const RunConfig& config, const std::string& ckpt_path) {
    return load_checkpoint(ckpt_path.empty() ? checkpoint_path(config) : ckpt_path);
}

std::vector<RequestRecord> concat_records(std::span<const RequestRecord> a,
                                          std::span<const RequestRecord> b) {
    std::vector<RequestRecord> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

} // namespace

std::string train_records_path(const RunConfig& config) {
    return join(config.data_dir, "train.jsonl");
}
std::string test_records_path(const RunConfig& config) {
    return join(config.data_dir, "test.jsonl");
}
std::string checkpoint_path(const RunConfig& config) { return join(config.out_dir, "checkpoint.bin"); }
std::string user_vectors_path(const RunConfig& config) { return join(config.out_dir, "users.vec"); }
std::string item_vectors_path(const RunConfig& config) { return join(config.out_dir, "items.vec"); }

LoadedData load_dataset(const RunConfig& config) {
    LoadedData data;
    data.train = load_records(train_records_path(config));
    data.test = load_records(test_records_path(config));
    if (data.train.empty()) throw DataError("empty training split in " + config.data_dir);
    return data;
}

std::string gen_data(const RunConfig& config) {
    const GeneratedData data = generate(config.generator_config());
    std::filesystem::create_directories(config.data_dir);
    write_records(train_records_path(config), data.train);
    write_records(test_records_path(config), data.test);
    std::string out = "wrote " + train_records_path(config) + " and " +
                      test_records_path(config) + "\n";
    out += summary_line("train", summarize(data.train));
    out += summary_line("test", summarize(data.test));
    return out;
}

std::string train(const RunConfig& config, const std::string& resume_path) {
    const LoadedData data = load_dataset(config);
    std::filesystem::create_directories(config.out_dir);
    const PipelineConfig pipeline = config.pipeline_config();
    RunOutputs outputs;
    if (resume_path.empty()) {
        outputs = run(pipeline, data.train, data.test, config.out_dir);
    } else {
        outputs = resume(load_checkpoint(resume_path), pipeline, data.train, data.test,
                         config.out_dir);
    }
    const std::string text = outputs.report.text();
    std::ofstream report(join(config.out_dir, "report.txt"));
    report << text;
    return text;
}

MetricsReport evaluate_checkpoint(const Checkpoint& checkpoint,
                                  std::span<const RequestRecord> catalog,
                                  std::span<const RequestRecord> test, const EvalSpec& spec) {
    MetricsReport out;
    for (const CheckpointModel& cm : checkpoint.models) {
        if (cm.role == "primary") {
            MetricsReport r = evaluate(cm.model, catalog, test, spec);
            out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
        } else {
            EvalSpec flat = spec;
            flat.weights = ServingWeights{0.0, 0.0, 1.0}; // unit scales: the raw dot product
            MetricsReport r = evaluate(cm.model, catalog, test, flat);
            for (const MetricRow& row : r.rows)
                if (cm.role == "mixed" || row.objective == cm.role) out.rows.push_back(row);
        }
    }
    return out;
}

std::string eval_report(const RunConfig& config, const std::string& ckpt_path) {
    const Checkpoint ck = load_run_checkpoint(config, ckpt_path);
    const LoadedData data = load_dataset(config);
    const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);
    return evaluate_checkpoint(ck, catalog, data.test, config.eval_spec()).table();
}

std::string export_vectors(const RunConfig& config, const std::string& ckpt_path) {
    const Checkpoint ck = load_run_checkpoint(config, ckpt_path);
    const TwoTowerModel& model = primary_model(ck);
    const LoadedData data = load_dataset(config);
    const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);
    const EntityCatalog entities = harvest_entities(catalog, catalog);
    const ServingExport exported =
        export_serving_vectors(model, entities.users, entities.items, config.weights);
    std::filesystem::create_directories(config.out_dir);
    write_vector_file(user_vectors_path(config), exported.users, model.final_layout);
    write_vector_file(item_vectors_path(config), exported.items, model.final_layout);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "wrote %zu user vectors and %zu item vectors of width %zu\n",
                  exported.users.ids.size(), exported.items.ids.size(),
                  model.final_layout.width());
    return buf;
}

Retrieval retrieve(const RunConfig& config, std::int64_t user_id, std::size_t k,
                   const ServingWeights& weights, const std::string& vectors_dir,
                   const std::string& ckpt_path) {
    TopkResult hits;
    if (!vectors_dir.empty()) {
        const VectorFile users = read_vector_file(join(vectors_dir, "users.vec"));
        const VectorFile items = read_vector_file(join(vectors_dir, "items.vec"));
        const auto it = std::find(users.set.ids.begin(), users.set.ids.end(), user_id);
        if (it == users.set.ids.end())
            throw DataError("unknown user id " + std::to_string(user_id));
        const std::size_t row = static_cast<std::size_t>(it - users.set.ids.begin());
        const RetrievalIndex index = build_index(items.set);
        hits = topk(users.set.vectors.row(row), index, k);
    } else {
        const Checkpoint ck = load_run_checkpoint(config, ckpt_path);
        const TwoTowerModel& model = primary_model(ck);
        const LoadedData data = load_dataset(config);
        const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);
        const EntityCatalog entities = harvest_entities(catalog, catalog);
        const auto it = std::find_if(entities.users.begin(), entities.users.end(),
                                     [&](const KeyedEntity& u) { return u.id == user_id; });
        if (it == entities.users.end())
            throw DataError("unknown user id " + std::to_string(user_id));
        const ServingExport exported =
            export_serving_vectors(model, {*it}, entities.items, weights);
        const RetrievalIndex index = build_index(exported.items);
        hits = topk(exported.users.vectors.row(0), index, k);
    }
    return Retrieval{std::move(hits.ids), std::move(hits.scores), hits.truncated};
}

std::string retrieval_text(const Retrieval& retrieval) {
    std::string out = "rank  item_id     score\n";
    char buf[96];
    for (std::size_t i = 0; i < retrieval.ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%-5zu %-10lld  %.6f\n", i + 1,
                      static_cast<long long>(retrieval.ids[i]), retrieval.scores[i]);
        out += buf;
    }
    if (retrieval.truncated) out += "(k exceeded the item count; returned everything)\n";
    return out;
}

std::string bench_report(const RunConfig& config, std::size_t repeats,
                         const std::string& ckpt_path) {
    const Checkpoint ck = load_run_checkpoint(config, ckpt_path);
    const TwoTowerModel& model = primary_model(ck);
    const LoadedData data = load_dataset(config);
    const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);
    const EntityCatalog entities = harvest_entities(catalog, data.test);
    const ServingExport exported =
        export_serving_vectors(model, entities.users, entities.items, config.weights);
    const RetrievalIndex index = build_index(exported.items);
    const ScanBenchmark bench = scan_benchmark(index, exported.users.vectors, repeats);
    char buf[224];
    std::snprintf(buf, sizeof(buf),
                  "items=%zu queries=%zu repeats=%zu seconds=%.4f items_per_second=%.3e "
                  "checksum=%.6f\n",
                  bench.items, bench.queries, bench.repeats, bench.seconds,
                  bench.items_per_second, bench.checksum);
    return buf;
}

std::string sweep_weights(const RunConfig& config, const std::vector<double>& click_weights,
                          const std::vector<double>& conversion_weights,
                          const std::string& ckpt_path) {
    if (click_weights.empty() || conversion_weights.empty())
        throw ConfigError("weight sweep: both weight lists must be nonempty");
    const Checkpoint ck = load_run_checkpoint(config, ckpt_path);
    const TwoTowerModel& model = primary_model(ck);
    const LoadedData data = load_dataset(config);
    const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);

    std::vector<ServingWeights> grid;
    for (double ko : click_weights)
        for (double kr : conversion_weights) grid.push_back(ServingWeights{1.0, ko, kr});
    const WeightSweepResult result =
        weight_sweep(model, catalog, data.test, grid, config.cutoffs);

    char buf[128];
    std::snprintf(buf, sizeof(buf), "grid_points=%zu user_exports=%zu item_exports=%zu "
                  "params_stable=%s\n",
                  grid.size(), result.user_exports, result.item_exports,
                  result.params_stable ? "yes" : "no");
    return result.table() + buf;
}

namespace {

std::string retraining_sweep(const RunConfig& config, const std::vector<double>& values,
                             const char* label, void (*apply)(RunConfig&, double)) {
    if (values.empty()) throw ConfigError("sweep: value list must be nonempty");
    if (config.mode != PipelineMode::Csmf)
        throw ConfigError("sweep: retraining sweeps require training.mode csmf");
    const LoadedData data = load_dataset(config);
    const std::vector<RequestRecord> catalog = concat_records(data.train, data.test);
    const std::size_t n = config.cutoffs.front();

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%-12s click_recall@%zu  click_ndcg@%zu  conv_recall@%zu  conv_ndcg@%zu\n",
                  label, n, n, n, n);
    std::string out = buf;
    for (double value : values) {
        RunConfig point = config;
        apply(point, value);
        point.validate();
        const RunOutputs run_out =
            run(point.pipeline_config(), data.train, data.test, "");
        const MetricsReport metrics = evaluate_checkpoint(run_out.final_checkpoint, catalog,
                                                          data.test, point.eval_spec());
        std::snprintf(buf, sizeof(buf), "%-12g %-15.6f %-13.6f %-14.6f %-12.6f\n", value,
                      metrics.get("click", n, "recall"), metrics.get("click", n, "ndcg"),
                      metrics.get("conversion", n, "recall"),
                      metrics.get("conversion", n, "ndcg"));
        out += buf;
    }
    return out;
}

} // namespace

std::string sweep_prune_value(const RunConfig& config, const std::vector<double>& values) {
    return retraining_sweep(config, values, "prune_value",
                            [](RunConfig& c, double v) { c.prune_value = v; });
}

std::string sweep_conflict_gain(const RunConfig& config, const std::vector<double>& values) {
    return retraining_sweep(config, values, "conflict_gain",
                            [](RunConfig& c, double v) { c.margin.conflict_gain = v; });
}

} // namespace csmf
