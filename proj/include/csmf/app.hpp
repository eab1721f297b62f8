#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csmf/run_config.hpp"

namespace csmf {

/// File locations every command agrees on.
std::string train_records_path(const RunConfig& config); // <data_dir>/train.jsonl
std::string test_records_path(const RunConfig& config);  // <data_dir>/test.jsonl
std::string checkpoint_path(const RunConfig& config);    // <out_dir>/checkpoint.bin
std::string user_vectors_path(const RunConfig& config);  // <out_dir>/users.vec
std::string item_vectors_path(const RunConfig& config);  // <out_dir>/items.vec

struct LoadedData {
    std::vector<RequestRecord> train;
    std::vector<RequestRecord> test;
};

LoadedData load_dataset(const RunConfig& config);

/// Generate the configured dataset, write both splits, return a summary.
std::string gen_data(const RunConfig& config);

/// Run the configured pipeline (resuming from `resume_path` when nonempty),
/// writing a checkpoint per stage boundary plus report.txt into out_dir.
std::string train(const RunConfig& config, const std::string& resume_path = "");

/// Metrics for every model in a checkpoint. The csmf model ranks by the
/// fused score under `spec`'s weights; baseline models rank by their raw dot
/// product, each reporting only its own objective (mixed reports both).
MetricsReport evaluate_checkpoint(const Checkpoint& checkpoint,
                                  std::span<const RequestRecord> catalog,
                                  std::span<const RequestRecord> test, const EvalSpec& spec);

std::string eval_report(const RunConfig& config, const std::string& ckpt_path = "");

/// Write users.vec / items.vec for fused serving into out_dir.
std::string export_vectors(const RunConfig& config, const std::string& ckpt_path = "");

struct Retrieval {
    std::vector<std::int64_t> ids;
    std::vector<double> scores;
    bool truncated = false;
};

/// Top-k fused retrieval for one user, either straight from a checkpoint or
/// from previously exported vector files when `vectors_dir` is nonempty (the
/// weights are already baked into exported user vectors and are ignored).
Retrieval retrieve(const RunConfig& config, std::int64_t user_id, std::size_t k,
                   const ServingWeights& weights, const std::string& vectors_dir = "",
                   const std::string& ckpt_path = "");

std::string retrieval_text(const Retrieval& retrieval);

/// Time the exact scan: every test user's fused vector against the full
/// item index, `repeats` times.
std::string bench_report(const RunConfig& config, std::size_t repeats,
                         const std::string& ckpt_path = "");

/// Serving-weight grid (exposure weight fixed at 1) over one checkpoint; no
/// retraining, item vectors exported once, parameter stability verified.
std::string sweep_weights(const RunConfig& config, const std::vector<double>& click_weights,
                          const std::vector<double>& conversion_weights,
                          const std::string& ckpt_path = "");

/// One full training run per value; reports both objectives at the first
/// cutoff. These sweeps retrain by nature, unlike the weight sweep.
std::string sweep_prune_value(const RunConfig& config, const std::vector<double>& values);
std::string sweep_conflict_gain(const RunConfig& config, const std::vector<double>& values);

} // namespace csmf
