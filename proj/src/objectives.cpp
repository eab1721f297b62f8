#include "csmf/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "csmf/data.hpp"
#include "csmf/errors.hpp"

namespace csmf {

namespace {

// Core of both losses: softmax cross entropy over the positive logit and a
// list of negative logits, stabilized by subtracting the maximum logit.
// Gradients are with respect to the logits.
LossResult logit_softmax(double l_pos, std::span<const double> l_negs) {
    if (l_negs.empty()) throw DataError("softmax loss requires at least one negative");
    double m = l_pos;
    for (double l : l_negs) m = std::max(m, l);
    if (!std::isfinite(m)) throw NumericError("non-finite logit in softmax loss");

    const double e_pos = std::exp(l_pos - m);
    double denom = e_pos;
    std::vector<double> e_negs(l_negs.size());
    for (std::size_t j = 0; j < l_negs.size(); ++j) {
        e_negs[j] = std::exp(l_negs[j] - m);
        denom += e_negs[j];
    }

    LossResult out;
    out.loss = std::log(denom) - (l_pos - m);
    const double p_pos = e_pos / denom;
    out.grad_pos = p_pos - 1.0;
    out.grad_negs.resize(l_negs.size());
    for (std::size_t j = 0; j < l_negs.size(); ++j) out.grad_negs[j] = e_negs[j] / denom;
    return out;
}

} // namespace

LossResult softmax_loss(double s_pos, std::span<const double> s_negs) {
    return logit_softmax(s_pos, s_negs);
}

const char* margin_application_name(MarginApplication application) {
    switch (application) {
    case MarginApplication::RequiredSeparation: return "required_separation";
    case MarginApplication::MarginSubtraction: return "margin_subtraction";
    }
    return "?";
}

MarginApplication margin_application_from_name(const std::string& name) {
    if (name == "required_separation") return MarginApplication::RequiredSeparation;
    if (name == "margin_subtraction") return MarginApplication::MarginSubtraction;
    throw ConfigError("unknown margin application \"" + name + "\"");
}

void MarginConfig::validate() const {
    if (min_separation < 0.0) throw ConfigError("margin min_separation must be >= 0");
    if (conflict_gain < 1.0) throw ConfigError("margin conflict_gain must be >= 1");
}

double aml_margin(Stage stage, double upstream_pos, double upstream_neg,
                  const MarginConfig& config) {
    if (stage == Stage::Exposure)
        throw ConfigError("adaptive margins apply to downstream stages only");
    config.validate();
    if (!std::isfinite(upstream_pos) || !std::isfinite(upstream_neg))
        throw NumericError("non-finite upstream score in margin");
    if (upstream_pos >= upstream_neg)
        return (upstream_pos - upstream_neg) + config.min_separation;
    return config.conflict_gain * (upstream_neg - upstream_pos) + config.min_separation;
}

LossResult aml_loss(double s_pos, std::span<const double> s_negs,
                    std::span<const double> margins, MarginApplication application) {
    if (margins.size() != s_negs.size())
        throw ShapeError("margin count does not match negative count");
    std::vector<double> logits(s_negs.size());
    for (std::size_t j = 0; j < s_negs.size(); ++j) {
        if (!std::isfinite(margins[j]) || margins[j] < 0.0)
            throw NumericError("margins must be finite and non-negative");
        logits[j] = application == MarginApplication::RequiredSeparation
                        ? s_negs[j] + margins[j]
                        : s_negs[j] - margins[j];
    }
    return logit_softmax(s_pos, logits);
}

ContrastiveBatch assemble_negatives(std::span<const PositiveExample> batch, Stage stage,
                                    RngStream& rng, std::size_t max_negatives) {
    if (batch.empty()) throw DataError("cannot assemble negatives for an empty batch");
    if (max_negatives == 0) throw ConfigError("max_negatives must be positive");

    ContrastiveBatch out;
    out.stage = stage;

    // Pool: every distinct item id referenced by the batch, positives first in
    // batch order, then (exposure stage only) request-local unexposed items.
    std::unordered_map<std::int64_t, std::size_t> pool_index;
    auto intern = [&](std::int64_t id, const ItemEvent* item) {
        auto [it, inserted] = pool_index.emplace(id, out.pool.size());
        if (inserted) out.pool.push_back(PoolItem{id, item});
        return it->second;
    };

    std::vector<std::size_t> positive_slots(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        if (ex.request == nullptr) throw DataError("positive example without a request");
        if (ex.exposed_index >= ex.request->exposed.size())
            throw DataError("positive index out of range for its request");
        const ItemEvent& item = ex.request->exposed[ex.exposed_index];
        positive_slots[i] = intern(item.id, &item);
    }
    if (stage == Stage::Exposure) {
        for (const auto& ex : batch)
            for (const ItemEvent& item : ex.request->unexposed) intern(item.id, &item);
    }

    out.examples.resize(batch.size());
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        ContrastiveExample& ce = out.examples[i];
        ce.request = ex.request;
        ce.positive = positive_slots[i];
        const std::int64_t pos_id = out.pool[ce.positive].id;

        candidates.clear();
        std::unordered_set<std::int64_t> seen{pos_id};
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const std::int64_t id = out.pool[positive_slots[k]].id;
            if (seen.insert(id).second) candidates.push_back(positive_slots[k]);
        }
        if (stage == Stage::Exposure) {
            for (const ItemEvent& item : ex.request->unexposed)
                if (seen.insert(item.id).second) candidates.push_back(pool_index.at(item.id));
        }
        if (candidates.empty())
            throw DataError("sampling produced no negatives for an example");

        if (candidates.size() > max_negatives) {
            // Partial Fisher-Yates: the first max_negatives slots become a
            // uniform sample without replacement.
            for (std::size_t k = 0; k < max_negatives; ++k) {
                const std::size_t j = k + static_cast<std::size_t>(
                                              rng.next_below(candidates.size() - k));
                std::swap(candidates[k], candidates[j]);
            }
            candidates.resize(max_negatives);
        }
        ce.negatives = candidates;
    }
    return out;
}

} // namespace csmf
