#include <optional>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "csmf/app.hpp"
#include "csmf/errors.hpp"
#include "csmf/pruning.hpp"

namespace py = pybind11;

namespace {

csmf::RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
    return csmf::build_run_config(config_path, overrides);
}

csmf::ServingWeights weights_from(const csmf::RunConfig& config,
                                  const std::optional<std::vector<double>>& weights) {
    if (!weights) return config.weights;
    if (weights->size() != 3) {
        throw csmf::ConfigError("weights expects exactly three values, got " +
                                std::to_string(weights->size()));
    }
    csmf::ServingWeights picked{(*weights)[0], (*weights)[1], (*weights)[2]};
    picked.validate();
    return picked;
}

} // namespace

PYBIND11_MODULE(_csmf, m) {
    m.doc() = "Cascaded multi-objective two-tower retrieval";

    const py::object base = py::register_exception<csmf::Error>(m, "CsmfError", PyExc_RuntimeError);
    py::register_exception<csmf::ShapeError>(m, "ShapeError", base);
    py::register_exception<csmf::ConfigError>(m, "ConfigError", base);
    py::register_exception<csmf::DataError>(m, "DataError", base);
    py::register_exception<csmf::ParseError>(m, "ParseError", base);
    py::register_exception<csmf::LifecycleError>(m, "LifecycleError", base);
    py::register_exception<csmf::NumericError>(m, "NumericError", base);
    py::register_exception<csmf::IoError>(m, "IoError", base);

    m.def(
        "resolve_config",
        [](const std::string& config_path, const std::vector<std::string>& overrides) {
            return resolve(config_path, overrides).to_json();
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        "Layer defaults, an optional config file, CSMF_SEED, and key=value "
        "overrides into the canonical config document.");

    m.def(
        "gen_data",
        [](const std::string& config_path, const std::vector<std::string>& overrides) {
            return csmf::gen_data(resolve(config_path, overrides));
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        py::call_guard<py::gil_scoped_release>(),
        "Write train.jsonl / test.jsonl into the configured data_dir.");

    m.def(
        "train",
        [](const std::string& config_path, const std::vector<std::string>& overrides,
           const std::string& resume) {
            return csmf::train(resolve(config_path, overrides), resume);
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("resume") = "", py::call_guard<py::gil_scoped_release>(),
        "Run the configured pipeline, writing stage checkpoints plus report.txt "
        "into out_dir; returns the report text.");

    m.def(
        "evaluate",
        [](const std::string& config_path, const std::vector<std::string>& overrides,
           const std::string& checkpoint) {
            const csmf::RunConfig config = resolve(config_path, overrides);
            csmf::MetricsReport report;
            {
                py::gil_scoped_release release;
                const std::string path =
                    checkpoint.empty() ? csmf::checkpoint_path(config) : checkpoint;
                const csmf::Checkpoint loaded = csmf::load_checkpoint(path);
                csmf::LoadedData data = csmf::load_dataset(config);
                std::vector<csmf::RequestRecord> catalog = data.train;
                catalog.insert(catalog.end(), data.test.begin(), data.test.end());
                report = csmf::evaluate_checkpoint(loaded, catalog, data.test, config.eval_spec());
            }
            py::list rows;
            for (const csmf::MetricRow& row : report.rows) {
                py::dict entry;
                entry["objective"] = row.objective;
                entry["n"] = row.n;
                entry["metric"] = row.metric;
                entry["value"] = row.value;
                entry["users"] = row.users;
                entry["skipped"] = row.skipped;
                rows.append(entry);
            }
            return rows;
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("checkpoint") = "",
        "Rank the held-out split against the full catalog and return one dict "
        "per (objective, cutoff, metric).");

    m.def(
        "export_vectors",
        [](const std::string& config_path, const std::vector<std::string>& overrides,
           const std::string& checkpoint) {
            return csmf::export_vectors(resolve(config_path, overrides), checkpoint);
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("checkpoint") = "", py::call_guard<py::gil_scoped_release>(),
        "Write users.vec / items.vec for fused serving into out_dir.");

    m.def(
        "retrieve",
        [](std::int64_t user_id, std::size_t k, const std::string& config_path,
           const std::vector<std::string>& overrides,
           const std::optional<std::vector<double>>& weights, const std::string& vectors_dir,
           const std::string& checkpoint) {
            const csmf::RunConfig config = resolve(config_path, overrides);
            const csmf::ServingWeights picked = weights_from(config, weights);
            csmf::Retrieval hits;
            {
                py::gil_scoped_release release;
                hits = csmf::retrieve(config, user_id, k, picked, vectors_dir, checkpoint);
            }
            py::dict result;
            result["ids"] = hits.ids;
            result["scores"] = hits.scores;
            result["truncated"] = hits.truncated;
            return result;
        },
        py::arg("user_id"), py::arg("k") = 10, py::arg("config_path") = "",
        py::arg("overrides") = std::vector<std::string>{}, py::arg("weights") = py::none(),
        py::arg("vectors_dir") = "", py::arg("checkpoint") = "",
        "Top-k fused retrieval for one user, from the checkpoint or, when "
        "vectors_dir is set, from previously exported vector files.");

    m.def(
        "sweep_weights",
        [](const std::string& config_path, const std::vector<std::string>& overrides,
           const std::vector<double>& click_weights, const std::vector<double>& conversion_weights,
           const std::string& checkpoint) {
            return csmf::sweep_weights(resolve(config_path, overrides), click_weights,
                                       conversion_weights, checkpoint);
        },
        py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("click_weights") = std::vector<double>{}, py::arg("conversion_weights") = std::vector<double>{},
        py::arg("checkpoint") = "", py::call_guard<py::gil_scoped_release>(),
        "Serving-weight grid over one trained checkpoint; no retraining.");

    m.def(
        "cpp_select",
        [](const std::vector<double>& magnitudes, double mass_fraction) {
            const csmf::PruneDecision decision = csmf::cpp_select(magnitudes, mass_fraction);
            std::vector<int> prune(decision.prune.begin(), decision.prune.end());
            return py::make_tuple(prune, decision.pruned_count, decision.total_mass);
        },
        py::arg("magnitudes"), py::arg("mass_fraction"),
        "Cumulative-percentile selection: returns (prune flags, pruned count, "
        "total mass). Flag 1 marks a pruned slot.");
}
