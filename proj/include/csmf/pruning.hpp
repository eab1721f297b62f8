#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csmf/stage.hpp"
#include "csmf/towers.hpp"

namespace csmf {

enum class PruneMethod : std::uint8_t {
    CumulativePercentile = 0,
    FixedRatio = 1,
};

const char* prune_method_name(PruneMethod method); // "cpp" / "fixed_ratio"
PruneMethod prune_method_from_name(const std::string& name);

struct PruneDecision {
    std::vector<std::uint8_t> prune; // 1 = prune, aligned with the input
    double total_mass = 0.0;
    double threshold = 0.0; // cumulative-mass bound actually applied
    std::size_t pruned_count = 0;
};

/// Sort magnitudes ascending (ties by original index), accumulate, and prune
/// the maximal prefix whose cumulative mass stays within `mass_fraction` of
/// the total. The largest magnitude always survives when mass_fraction < 1;
/// an all-zero group keeps only its first element.
PruneDecision cpp_select(std::span<const double> magnitudes, double mass_fraction);

/// Prune the floor(ratio * n) smallest magnitudes (ties by original index).
PruneDecision fixed_ratio_select(std::span<const double> magnitudes, double ratio);

struct GroupTransition {
    std::string group;
    std::size_t group_size = 0;
    std::size_t retained = 0;
    std::size_t zero_locked = 0;
    std::size_t handed_off = 0;
    double mass_total = 0.0;
    double mass_pruned = 0.0;
};

struct TransitionReport {
    Stage stage = Stage::Exposure;
    PruneMethod method = PruneMethod::CumulativePercentile;
    double parameter = 0.0;
    std::vector<GroupTransition> groups;

    std::size_t total_retained() const;
    std::size_t total_pruned() const;
};

/// Close out a stage: per prune group (one per layer and one per embedding
/// table), select over the stage's trainable parameters by magnitude; retained
/// parameters freeze at this stage, pruned ones either zero-lock (their target
/// block belongs to the committed prefix) or restart at zero as the next
/// stage's trainable capacity. With non-structural connectivity every pruned
/// parameter is handed off.
TransitionReport commit_stage(TwoTowerModel& model, Stage stage, PruneMethod method,
                              double value);

} // namespace csmf
