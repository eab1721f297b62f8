#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csmf/rng.hpp"
#include "csmf/stage.hpp"

namespace csmf {

struct RequestRecord;
struct ItemEvent;

struct LossResult {
    double loss = 0.0;
    double grad_pos = 0.0;
    std::vector<double> grad_negs;
};

/// -log( e^{s_pos} / (e^{s_pos} + sum_j e^{s_j}) ), stabilized by max
/// subtraction. The positive appears in the denominator.
LossResult softmax_loss(double s_pos, std::span<const double> s_negs);

enum class MarginApplication : std::uint8_t {
    /// Negatives must clear the positive by the margin: logits are s_j + m_j.
    RequiredSeparation = 0,
    /// Margin subtracted from the negative logits: s_j - m_j.
    MarginSubtraction = 1,
};

const char* margin_application_name(MarginApplication application);
MarginApplication margin_application_from_name(const std::string& name);

struct MarginConfig {
    double min_separation = 0.1; // floor added to every margin
    double conflict_gain = 1.8;  // amplification when upstream disagrees with the label
    MarginApplication application = MarginApplication::RequiredSeparation;

    void validate() const; // min_separation >= 0, conflict_gain >= 1
};

/// Margin for one (positive, negative) pair from upstream-stage scores. When
/// the upstream stage agrees with the label ordering the margin is the
/// upstream gap plus the floor; when it disagrees the gap is amplified by the
/// conflict gain. Upstream for the click stage is the exposure score; for the
/// conversion stage it is the product of the exposure and click scores.
double aml_margin(Stage stage, double upstream_pos, double upstream_neg,
                  const MarginConfig& config);

/// Softmax loss with per-negative margins applied to the negative logits.
/// With all margins zero this is exactly softmax_loss.
LossResult aml_loss(double s_pos, std::span<const double> s_negs,
                    std::span<const double> margins, MarginApplication application);

/// One positive event: an exposed item inside its request.
struct PositiveExample {
    const RequestRecord* request = nullptr;
    std::size_t exposed_index = 0;
};

struct PoolItem {
    std::int64_t id = 0;
    const ItemEvent* item = nullptr;
};

struct ContrastiveExample {
    const RequestRecord* request = nullptr;
    std::size_t positive = 0;            // pool index
    std::vector<std::size_t> negatives;  // pool indices
};

struct ContrastiveBatch {
    Stage stage = Stage::Exposure;
    std::vector<PoolItem> pool;
    std::vector<ContrastiveExample> examples;
};

/// In-batch negatives (the other examples' positives) plus, for the exposure
/// stage, the example's own request-local unexposed items. Candidate lists
/// longer than max_negatives are truncated by uniform sampling without
/// replacement. An example's own positive item never appears among its
/// negatives; an example left without negatives is a sampling error.
ContrastiveBatch assemble_negatives(std::span<const PositiveExample> batch, Stage stage,
                                    RngStream& rng, std::size_t max_negatives);

} // namespace csmf
