#include "csmf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "csmf/errors.hpp"

namespace csmf {

namespace {

using nlohmann::json;

// How strongly the platform's exposure score aligns with click affinity.
// Nonzero alignment gives exposure data transferable signal for the later
// stages, which is the premise of pretraining on exposures.
constexpr double kPlatformAlign = 0.35;

// Latent coordinates revealed as dense features, per factor.
constexpr std::size_t kDenseCoords = kGeneratedDenseCount / 3;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix mix(const Matrix& a, double wa, const Matrix& b, double wb) {
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.values.size(); ++i)
        out.values[i] = wa * a.values[i] + wb * b.values[i];
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Solve mean(sigmoid(a + b)) = rate for the intercept b.
double calibrate_intercept(std::span<const double> affinities, double rate) {
    if (affinities.empty()) return -40.0;
    double lo = -40.0, hi = 40.0;
    for (int iter = 0; iter < 100; ++iter) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (double a : affinities) mean += sigmoid(a + mid);
        mean /= static_cast<double>(affinities.size());
        (mean < rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> reveal(const Matrix& platform, const Matrix& click, const Matrix& conversion,
                           std::size_t row) {
    std::vector<double> dense;
    dense.reserve(3 * kDenseCoords);
    for (const Matrix* m : {&platform, &click, &conversion})
        for (std::size_t c = 0; c < kDenseCoords; ++c) dense.push_back((*m)(row, c));
    return dense;
}

} // namespace

void RequestRecord::validate() const {
    const std::string where = " (request " + std::to_string(request_id) + ")";
    std::unordered_set<std::int64_t> exposed_ids;
    for (const ItemEvent& item : exposed) {
        if (item.converted && !item.clicked)
            throw DataError("converted-but-not-clicked: item " + std::to_string(item.id) + where);
        if (!exposed_ids.insert(item.id).second)
            throw DataError("duplicate-exposed-item: item " + std::to_string(item.id) + where);
    }
    std::unordered_set<std::int64_t> unexposed_ids;
    for (const ItemEvent& item : unexposed) {
        if (item.clicked || item.converted)
            throw DataError("label-on-unexposed-item: item " + std::to_string(item.id) + where);
        if (!unexposed_ids.insert(item.id).second)
            throw DataError("duplicate-unexposed-item: item " + std::to_string(item.id) + where);
        if (exposed_ids.count(item.id))
            throw DataError("exposed-unexposed-overlap: item " + std::to_string(item.id) + where);
    }
    for (double v : user_dense)
        if (!std::isfinite(v)) throw DataError("non-finite user dense feature" + where);
    for (const ItemEvent& item : exposed)
        for (double v : item.dense)
            if (!std::isfinite(v)) throw DataError("non-finite item dense feature" + where);
    for (const ItemEvent& item : unexposed)
        for (double v : item.dense)
            if (!std::isfinite(v)) throw DataError("non-finite item dense feature" + where);
}

void GeneratorConfig::validate() const {
    if (users == 0 || items == 0 || requests_per_user == 0)
        throw ConfigError("generator: users, items and requests_per_user must be positive");
    if (exposed_per_request == 0)
        throw ConfigError("generator: exposed_per_request must be positive");
    if (exposed_per_request + unexposed_per_request > items)
        throw ConfigError("generator: exposed + unexposed per request exceeds the item count");
    if (latent_dim < kDenseCoords)
        throw ConfigError("generator: latent_dim must be at least " + std::to_string(kDenseCoords));
    if (!(click_rate > 0.0 && click_rate < 1.0) ||
        !(conversion_rate > 0.0 && conversion_rate < 1.0))
        throw ConfigError("generator: rates must lie in (0, 1)");
    if (conversion_rate >= click_rate)
        throw ConfigError("generator: conversion_rate must be below click_rate");
    if (rho_conflict < 0.0 || rho_conflict > 1.0)
        throw ConfigError("generator: rho_conflict must lie in [0, 1]");
    if (split_tick < 1 || split_tick > static_cast<std::int64_t>(requests_per_user))
        throw ConfigError("generator: split_tick must lie in [1, requests_per_user]");
}

GeneratedData generate(const GeneratorConfig& config) {
    config.validate();
    const std::size_t d = config.latent_dim;
    // Latent scale chosen so pairwise affinities have a standard deviation
    // near 2: strong enough for sigmoids to separate items, weak enough to
    // keep event rates calibratable.
    const double scale = std::sqrt(2.0) / std::pow(static_cast<double>(d), 0.25);
    const RngStream root(config.seed);

    GeneratorInternals gt;
    auto draw = [&](std::uint64_t tag, std::size_t rows) {
        RngStream s = root.derive(1, tag);
        return gaussian_init(s, rows, d, scale);
    };
    gt.user_click = draw(0, config.users);
    Matrix user_plat_ind = draw(1, config.users);
    Matrix user_conv_ind = draw(2, config.users);
    gt.item_click = draw(16, config.items);
    Matrix item_plat_ind = draw(17, config.items);
    Matrix item_conv_ind = draw(18, config.items);

    const double align_rest = std::sqrt(1.0 - kPlatformAlign * kPlatformAlign);
    gt.user_platform = mix(gt.user_click, kPlatformAlign, user_plat_ind, align_rest);
    gt.item_platform = mix(gt.item_click, kPlatformAlign, item_plat_ind, align_rest);

    const double rho = config.rho_conflict;
    const double conv_norm = std::sqrt((1.0 - rho) * (1.0 - rho) + rho * rho);
    gt.user_conversion = mix(gt.user_click, (1.0 - rho) / conv_norm, user_conv_ind, rho / conv_norm);
    gt.item_conversion = mix(gt.item_click, (1.0 - rho) / conv_norm, item_conv_ind, rho / conv_norm);

    // Pass 1: sample which items each request exposes. Adding Gumbel noise to
    // the platform scores and keeping the top slots draws without replacement
    // from the matching softmax; the best slots are exposed, the remainder are
    // the request's unexposed candidates.
    struct RequestDraft {
        std::size_t user = 0;
        std::int64_t ts = 0;
        std::vector<std::size_t> exposed;
        std::vector<std::size_t> unexposed;
    };
    const std::size_t slots = config.exposed_per_request + config.unexposed_per_request;
    RngStream gumbel = root.derive(2, 0);
    std::vector<RequestDraft> drafts;
    drafts.reserve(config.users * config.requests_per_user);
    std::vector<double> platform_scores(config.items);
    std::vector<std::pair<double, std::size_t>> noisy(config.items);
    std::vector<double> click_affinities;
    for (std::size_t u = 0; u < config.users; ++u) {
        for (std::size_t i = 0; i < config.items; ++i)
            platform_scores[i] = dot(gt.user_platform.row(u), gt.item_platform.row(i));
        for (std::size_t t = 0; t < config.requests_per_user; ++t) {
            for (std::size_t i = 0; i < config.items; ++i) {
                const double g = -std::log(-std::log(gumbel.next_double()));
                noisy[i] = {platform_scores[i] + g, i};
            }
            std::partial_sort(noisy.begin(), noisy.begin() + static_cast<std::ptrdiff_t>(slots),
                              noisy.end(), [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            RequestDraft draft;
            draft.user = u;
            draft.ts = static_cast<std::int64_t>(t);
            for (std::size_t s = 0; s < config.exposed_per_request; ++s) {
                draft.exposed.push_back(noisy[s].second);
                click_affinities.push_back(
                    dot(gt.user_click.row(u), gt.item_click.row(noisy[s].second)));
            }
            for (std::size_t s = config.exposed_per_request; s < slots; ++s)
                draft.unexposed.push_back(noisy[s].second);
            drafts.push_back(std::move(draft));
        }
    }

    // Pass 2: calibrated Bernoulli labels, cascade by construction.
    gt.click_intercept = calibrate_intercept(click_affinities, config.click_rate);
    RngStream click_rng = root.derive(3, 0);
    std::vector<std::uint8_t> clicked(click_affinities.size(), 0);
    std::vector<double> conv_affinities;
    std::vector<std::size_t> clicked_slots;
    {
        std::size_t slot = 0;
        for (const RequestDraft& draft : drafts) {
            for (std::size_t item : draft.exposed) {
                const double p = sigmoid(click_affinities[slot] + gt.click_intercept);
                if (click_rng.next_double() < p) {
                    clicked[slot] = 1;
                    conv_affinities.push_back(
                        dot(gt.user_conversion.row(draft.user), gt.item_conversion.row(item)));
                    clicked_slots.push_back(slot);
                }
                ++slot;
            }
        }
    }
    const double clicks = static_cast<double>(clicked_slots.size());
    const double conditional_rate =
        clicks > 0.0 ? config.conversion_rate * static_cast<double>(click_affinities.size()) / clicks
                     : 0.0;
    gt.conversion_intercept = calibrate_intercept(conv_affinities, conditional_rate);
    RngStream conv_rng = root.derive(4, 0);
    std::vector<std::uint8_t> converted(click_affinities.size(), 0);
    for (std::size_t k = 0; k < clicked_slots.size(); ++k) {
        const double p = sigmoid(conv_affinities[k] + gt.conversion_intercept);
        if (conv_rng.next_double() < p) converted[clicked_slots[k]] = 1;
    }

    GeneratedData out;
    out.internals = std::move(gt);
    const GeneratorInternals& g = out.internals;
    auto item_event = [&](std::size_t item) {
        ItemEvent ev;
        ev.id = static_cast<std::int64_t>(item);
        ev.dense = reveal(g.item_platform, g.item_click, g.item_conversion, item);
        ev.cats = {{ev.id}};
        return ev;
    };
    std::size_t slot = 0;
    std::int64_t request_id = 0;
    for (const RequestDraft& draft : drafts) {
        RequestRecord rec;
        rec.request_id = request_id++;
        rec.user_id = static_cast<std::int64_t>(draft.user);
        rec.ts = draft.ts;
        rec.user_dense = reveal(g.user_platform, g.user_click, g.user_conversion, draft.user);
        rec.user_cats = {{rec.user_id}};
        for (std::size_t item : draft.exposed) {
            ItemEvent ev = item_event(item);
            ev.clicked = clicked[slot] != 0;
            ev.converted = converted[slot] != 0;
            ++slot;
            rec.exposed.push_back(std::move(ev));
        }
        for (std::size_t item : draft.unexposed) rec.unexposed.push_back(item_event(item));
        rec.validate();
        (rec.ts < config.split_tick ? out.train : out.test).push_back(std::move(rec));
    }
    return out;
}

namespace {

json item_to_json(const ItemEvent& item, bool exposed) {
    json j;
    j["item_id"] = item.id;
    j["dense"] = item.dense;
    j["cats"] = item.cats;
    if (exposed) {
        j["clicked"] = item.clicked;
        j["converted"] = item.converted;
    }
    return j;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const char* what) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) == allowed.end())
            throw ParseError(std::string(what) + ": unknown key \"" + key + "\"");
    }
}

template <typename T>
T require(const json& j, const char* key, const char* what) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string(what) + ": missing key \"" + key + "\"");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string(what) + ": bad value for \"" + key + "\": " + e.what());
    }
}

ItemEvent item_from_json(const json& j, bool exposed) {
    const char* what = exposed ? "exposed item" : "unexposed item";
    if (!j.is_object()) throw ParseError(std::string(what) + ": not an object");
    if (exposed)
        reject_unknown_keys(j, {"item_id", "dense", "cats", "clicked", "converted"}, what);
    else
        reject_unknown_keys(j, {"item_id", "dense", "cats"}, what);
    ItemEvent item;
    item.id = require<std::int64_t>(j, "item_id", what);
    item.dense = require<std::vector<double>>(j, "dense", what);
    item.cats = require<std::vector<std::vector<std::int64_t>>>(j, "cats", what);
    if (exposed) {
        item.clicked = require<bool>(j, "clicked", what);
        item.converted = require<bool>(j, "converted", what);
    }
    return item;
}

} // namespace

void write_records(const std::string& path, std::span<const RequestRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const RequestRecord& rec : records) {
        json j;
        j["request_id"] = rec.request_id;
        j["user_id"] = rec.user_id;
        j["ts"] = rec.ts;
        j["user_dense"] = rec.user_dense;
        j["user_cats"] = rec.user_cats;
        json exposed = json::array();
        for (const ItemEvent& item : rec.exposed) exposed.push_back(item_to_json(item, true));
        j["exposed"] = std::move(exposed);
        json unexposed = json::array();
        for (const ItemEvent& item : rec.unexposed) unexposed.push_back(item_to_json(item, false));
        j["unexposed"] = std::move(unexposed);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<RequestRecord> load_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<RequestRecord> records;
    std::string line;
    std::size_t line_no = 0;
    auto at = [&] { return path + ":" + std::to_string(line_no) + ": "; };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) throw ParseError(at() + "empty line");
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(at() + e.what());
        }
        try {
            if (!j.is_object()) throw ParseError("record is not an object");
            reject_unknown_keys(
                j, {"request_id", "user_id", "ts", "user_dense", "user_cats", "exposed", "unexposed"},
                "record");
            RequestRecord rec;
            rec.request_id = require<std::int64_t>(j, "request_id", "record");
            rec.user_id = require<std::int64_t>(j, "user_id", "record");
            rec.ts = require<std::int64_t>(j, "ts", "record");
            rec.user_dense = require<std::vector<double>>(j, "user_dense", "record");
            rec.user_cats = require<std::vector<std::vector<std::int64_t>>>(j, "user_cats", "record");
            const json& exposed = j.at("exposed");
            const json& unexposed = j.at("unexposed");
            if (!exposed.is_array() || !unexposed.is_array())
                throw ParseError("exposed/unexposed must be arrays");
            for (const json& e : exposed) rec.exposed.push_back(item_from_json(e, true));
            for (const json& e : unexposed) rec.unexposed.push_back(item_from_json(e, false));
            rec.validate();
            records.push_back(std::move(rec));
        } catch (const ParseError& e) {
            throw ParseError(at() + e.what());
        } catch (const DataError& e) {
            throw DataError(at() + e.what());
        }
    }
    if (records.empty())
        std::cerr << "warning: " << path << " contains no records\n";
    return records;
}

DatasetSummary summarize(std::span<const RequestRecord> records) {
    DatasetSummary s;
    std::unordered_set<std::int64_t> users, items;
    for (const RequestRecord& rec : records) {
        ++s.requests;
        users.insert(rec.user_id);
        for (const ItemEvent& item : rec.exposed) {
            ++s.exposures;
            s.clicks += item.clicked ? 1 : 0;
            s.conversions += item.converted ? 1 : 0;
            items.insert(item.id);
        }
        for (const ItemEvent& item : rec.unexposed) items.insert(item.id);
    }
    s.users = users.size();
    s.items = items.size();
    return s;
}

std::vector<PositiveExample> stage_view(std::span<const RequestRecord> records, Stage stage) {
    std::vector<PositiveExample> out;
    for (const RequestRecord& rec : records) {
        for (std::size_t i = 0; i < rec.exposed.size(); ++i) {
            const ItemEvent& item = rec.exposed[i];
            const bool take = stage == Stage::Exposure || (stage == Stage::Click && item.clicked) ||
                              (stage == Stage::Conversion && item.converted);
            if (take) out.push_back(PositiveExample{&rec, i});
        }
    }
    return out;
}

std::vector<RequestRecord> recovery_subset(std::span<const RequestRecord> records, double fraction,
                                           std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("recovery fraction must lie in (0, 1]");
    const std::size_t n = records.size();
    if (n == 0) return {};
    std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    k = std::clamp<std::size_t>(k, 1, n);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
        std::swap(order[i], order[j]);
    }
    order.resize(k);
    std::sort(order.begin(), order.end());
    std::vector<RequestRecord> out;
    out.reserve(k);
    for (std::size_t idx : order) out.push_back(records[idx]);
    return out;
}

} // namespace csmf
