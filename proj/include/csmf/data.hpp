#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csmf/matrix.hpp"
#include "csmf/objectives.hpp"
#include "csmf/stage.hpp"

namespace csmf {

/// One item occurrence inside a request. Unexposed candidates carry the same
/// feature payload with both labels false.
struct ItemEvent {
    std::int64_t id = 0;
    std::vector<double> dense;
    std::vector<std::vector<std::int64_t>> cats;
    bool clicked = false;
    bool converted = false;

    bool operator==(const ItemEvent&) const = default;
};

/// One page view: the user, the items the platform exposed (with click and
/// conversion labels), and the candidates it considered but did not expose.
struct RequestRecord {
    std::int64_t request_id = 0;
    std::int64_t user_id = 0;
    std::int64_t ts = 0;
    std::vector<double> user_dense;
    std::vector<std::vector<std::int64_t>> user_cats;
    std::vector<ItemEvent> exposed;
    std::vector<ItemEvent> unexposed;

    /// DataError naming the violated rule: converted-but-not-clicked,
    /// label on an unexposed item, duplicate ids, exposed/unexposed overlap.
    void validate() const;

    bool operator==(const RequestRecord&) const = default;
};

/// Width of the dense feature vectors the generator emits (both sides).
inline constexpr std::size_t kGeneratedDenseCount = 6;

struct GeneratorConfig {
    std::size_t users = 5000;
    std::size_t items = 2000;
    std::size_t requests_per_user = 3;
    std::size_t exposed_per_request = 5;
    std::size_t unexposed_per_request = 3;
    std::size_t latent_dim = 8;
    double rho_conflict = 0.5; // 0 = conversions follow clicks, 1 = independent
    double click_rate = 0.3;       // clicks per exposure
    double conversion_rate = 0.03; // conversions per exposure
    std::int64_t split_tick = 2;   // ts < split_tick goes to train
    std::uint64_t seed = 1;

    void validate() const;
};

/// The latent factors behind a generated dataset, kept for sanity checks on
/// the generator itself (rank correlations, calibration).
struct GeneratorInternals {
    Matrix user_platform, user_click, user_conversion;
    Matrix item_platform, item_click, item_conversion;
    double click_intercept = 0.0;
    double conversion_intercept = 0.0;
};

struct GeneratedData {
    std::vector<RequestRecord> train;
    std::vector<RequestRecord> test;
    GeneratorInternals internals;
};

/// Synthetic cascaded-behavior data. Exposures are sampled from a softmax
/// over a platform score that partially aligns with click affinity; clicks
/// and conversions are Bernoulli in the exposed set, with intercepts
/// calibrated so realized rates track the configured ones. Conversion
/// affinity interpolates between the click direction and an independent
/// direction by rho_conflict. Cascade containment holds by construction.
GeneratedData generate(const GeneratorConfig& config);

/// One JSON object per line, fields exactly mirroring RequestRecord.
void write_records(const std::string& path, std::span<const RequestRecord> records);

/// Strict parse: unknown keys rejected, every record validated, failures
/// reported with their line number. An empty file is an empty dataset.
std::vector<RequestRecord> load_records(const std::string& path);

struct DatasetSummary {
    std::size_t requests = 0;
    std::size_t exposures = 0;
    std::size_t clicks = 0;
    std::size_t conversions = 0;
    std::size_t users = 0;
    std::size_t items = 0;
};

DatasetSummary summarize(std::span<const RequestRecord> records);

/// Positive-example stream for one stage: every exposed item for the exposure
/// stage, clicked items for the click stage, converted for conversion. The
/// record pointers borrow from `records`.
std::vector<PositiveExample> stage_view(std::span<const RequestRecord> records, Stage stage);

/// Uniform request-level sample without replacement, in original record
/// order. fraction must be in (0, 1]; the sample never rounds down to empty.
std::vector<RequestRecord> recovery_subset(std::span<const RequestRecord> records,
                                           double fraction, std::uint64_t seed);

} // namespace csmf
