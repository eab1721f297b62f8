#include "csmf/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csmf/errors.hpp"

namespace csmf {
namespace {

void check_magnitudes(std::span<const double> magnitudes) {
    for (double m : magnitudes) {
        if (!std::isfinite(m) || m < 0.0) {
            throw NumericError("prune selection: magnitudes must be finite and non-negative");
        }
    }
}

std::vector<std::size_t> ascending_order(std::span<const double> magnitudes) {
    std::vector<std::size_t> order(magnitudes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (magnitudes[a] != magnitudes[b]) return magnitudes[a] < magnitudes[b];
        return a < b;
    });
    return order;
}

} // namespace

const char* prune_method_name(PruneMethod method) {
    return method == PruneMethod::CumulativePercentile ? "cpp" : "fixed_ratio";
}

PruneMethod prune_method_from_name(const std::string& name) {
    if (name == "cpp") return PruneMethod::CumulativePercentile;
    if (name == "fixed_ratio") return PruneMethod::FixedRatio;
    throw ConfigError("unknown prune method \"" + name + "\" (expected cpp or fixed_ratio)");
}

PruneDecision cpp_select(std::span<const double> magnitudes, double mass_fraction) {
    if (!(mass_fraction > 0.0 && mass_fraction < 1.0)) {
        throw ConfigError("cpp_select: mass_fraction must lie in (0, 1)");
    }
    check_magnitudes(magnitudes);

    PruneDecision decision;
    decision.prune.assign(magnitudes.size(), 0);
    if (magnitudes.empty()) return decision;

    const std::vector<std::size_t> order = ascending_order(magnitudes);
    double total = 0.0;
    for (std::size_t idx : order) total += magnitudes[idx];
    decision.total_mass = total;

    if (total == 0.0) {
        // Degenerate group: keep only the first element.
        for (std::size_t j = 1; j < order.size(); ++j) decision.prune[order[j]] = 1;
        decision.pruned_count = order.size() - 1;
        decision.threshold = 0.0;
        return decision;
    }

    const double bound = mass_fraction * total;
    decision.threshold = bound;
    double cumulative = 0.0;
    for (std::size_t idx : order) {
        cumulative += magnitudes[idx];
        if (cumulative <= bound) {
            decision.prune[idx] = 1;
            ++decision.pruned_count;
        } else {
            break;
        }
    }
    return decision;
}

PruneDecision fixed_ratio_select(std::span<const double> magnitudes, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("fixed_ratio_select: ratio must lie in [0, 1)");
    }
    check_magnitudes(magnitudes);

    PruneDecision decision;
    decision.prune.assign(magnitudes.size(), 0);
    const std::vector<std::size_t> order = ascending_order(magnitudes);
    for (std::size_t idx : order) decision.total_mass += magnitudes[idx];

    const auto k = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(magnitudes.size())));
    for (std::size_t j = 0; j < k; ++j) decision.prune[order[j]] = 1;
    decision.pruned_count = k;
    decision.threshold = ratio;
    return decision;
}

std::size_t TransitionReport::total_retained() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.retained;
    return n;
}

std::size_t TransitionReport::total_pruned() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.zero_locked + g.handed_off;
    return n;
}

namespace {

struct ParamSlot {
    double* value;
    ParamState* state;
    Stage target; // stage of the unit or coordinate the parameter writes into
};

PruneDecision select(std::span<const double> magnitudes, PruneMethod method, double value) {
    return method == PruneMethod::CumulativePercentile ? cpp_select(magnitudes, value)
                                                       : fixed_ratio_select(magnitudes, value);
}

GroupTransition commit_group(std::vector<ParamSlot>& slots, const std::string& name, Stage stage,
                             PruneMethod method, double value, bool structural) {
    GroupTransition t;
    t.group = name;
    t.group_size = slots.size();
    if (slots.empty()) return t;

    std::vector<double> magnitudes;
    magnitudes.reserve(slots.size());
    for (const ParamSlot& s : slots) magnitudes.push_back(std::fabs(*s.value));
    const PruneDecision decision = select(magnitudes, method, value);
    t.mass_total = decision.total_mass;

    for (std::size_t i = 0; i < slots.size(); ++i) {
        ParamSlot& s = slots[i];
        if (!decision.prune[i]) {
            *s.state = ParamState::frozen(stage);
            ++t.retained;
            continue;
        }
        t.mass_pruned += magnitudes[i];
        *s.value = 0.0;
        if (structural && s.target == stage) {
            *s.state = ParamState::zero_locked();
            ++t.zero_locked;
        } else if (structural) {
            // Freed capacity stays with the block it writes into; retraining it
            // later cannot disturb segments that are already committed.
            *s.state = ParamState::trainable(s.target);
            ++t.handed_off;
        } else {
            *s.state = ParamState::trainable(next_stage(stage));
            ++t.handed_off;
        }
    }
    return t;
}

void collect_layer(MaskedLayer& layer, Stage sweep, std::vector<ParamSlot>& slots) {
    for (std::size_t o = 0; o < layer.out_width(); ++o) {
        const Stage target = layer.out_layout.stage_of(o);
        for (std::size_t i = 0; i < layer.in_width(); ++i) {
            ParamState& st = layer.wstate(o, i);
            if (st.kind == ParamKind::Trainable && st.stage <= sweep) {
                slots.push_back({&layer.weights(o, i), &st, target});
            }
        }
        ParamState& bst = layer.bias_state[o];
        if (bst.kind == ParamKind::Trainable && bst.stage <= sweep) {
            slots.push_back({&layer.bias[o], &bst, target});
        }
    }
}

void collect_table(EmbeddingTable& table, Stage sweep, std::vector<ParamSlot>& slots) {
    for (std::size_t r = 0; r < table.table.rows; ++r) {
        for (std::size_t c = 0; c < table.table.cols; ++c) {
            ParamState& st = table.cell_state(r, c);
            if (st.kind == ParamKind::Trainable && st.stage <= sweep) {
                slots.push_back({&table.table(r, c), &st, table.layout.stage_of(c)});
            }
        }
    }
}

} // namespace

TransitionReport commit_stage(TwoTowerModel& model, Stage stage, PruneMethod method,
                              double value) {
    if (stage == Stage::Conversion) {
        throw LifecycleError("commit_stage: the final stage freezes without pruning");
    }
    if (model.stage_committed[stage_index(stage)]) {
        throw LifecycleError(std::string("commit_stage: stage ") + stage_name(stage) +
                             " was already committed");
    }
    for (std::size_t s = 0; s < stage_index(stage); ++s) {
        if (!model.stage_committed[s]) {
            throw LifecycleError(std::string("commit_stage: stage ") +
                                 stage_name(static_cast<Stage>(s)) + " must be committed first");
        }
    }

    TransitionReport report;
    report.stage = stage;
    report.method = method;
    report.parameter = value;

    // The exposure stage pre-trains every block through the full-vector
    // objective, so its commit sweeps all parameters that training touched.
    // Later stages train only up to their own prefix.
    const Stage sweep = stage == Stage::Exposure ? Stage::Conversion : stage;

    std::size_t trainable_total = 0;
    for (Side side : {Side::User, Side::Item}) {
        Tower& tower = tower_of(model, side);
        const std::string prefix = side == Side::User ? "user" : "item";
        for (EmbeddingTable& table : tower.embeddings) {
            std::vector<ParamSlot> slots;
            collect_table(table, sweep, slots);
            trainable_total += slots.size();
            report.groups.push_back(commit_group(slots, prefix + "/embedding/" + table.name,
                                                 stage, method, value, model.structural));
        }
        for (std::size_t l = 0; l < tower.layers.size(); ++l) {
            std::vector<ParamSlot> slots;
            collect_layer(tower.layers[l], sweep, slots);
            trainable_total += slots.size();
            report.groups.push_back(commit_group(slots, prefix + "/layer/" + std::to_string(l),
                                                 stage, method, value, model.structural));
        }
    }
    if (trainable_total == 0) {
        throw LifecycleError(std::string("commit_stage: stage ") + stage_name(stage) +
                             " holds no trainable parameters");
    }
    model.stage_committed[stage_index(stage)] = true;
    return report;
}

} // namespace csmf
