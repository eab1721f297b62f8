#include "csmf/run_config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "csmf/errors.hpp"

namespace csmf {

namespace {

using nlohmann::json;

// In-memory documents hold signed integers where parsed ones hold unsigned;
// accept both spellings of a non-negative integer.
bool nonneg_int(const json& v) {
    return v.is_number_unsigned() ||
           (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

json layout_json(const BlockLayout& layout) {
    return json::array({layout.sizes[0], layout.sizes[1], layout.sizes[2]});
}

BlockLayout layout_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != kStageCount)
        throw ConfigError("config: " + where + " must be an array of " +
                          std::to_string(kStageCount) + " block sizes");
    BlockLayout layout;
    for (std::size_t i = 0; i < kStageCount; ++i) {
        if (!nonneg_int(j[i]))
            throw ConfigError("config: " + where + " block sizes must be non-negative integers");
        layout.sizes[i] = j[i].get<std::size_t>();
    }
    return layout;
}

json to_document(const RunConfig& c) {
    json generator{
        {"users", c.generator.users},
        {"items", c.generator.items},
        {"requests_per_user", c.generator.requests_per_user},
        {"exposed_per_request", c.generator.exposed_per_request},
        {"unexposed_per_request", c.generator.unexposed_per_request},
        {"latent_dim", c.generator.latent_dim},
        {"rho_conflict", c.generator.rho_conflict},
        {"click_rate", c.generator.click_rate},
        {"conversion_rate", c.generator.conversion_rate},
        {"split_tick", c.generator.split_tick},
    };
    json hidden_layouts = json::array();
    for (const BlockLayout& l : c.hidden_layouts) hidden_layouts.push_back(layout_json(l));
    json model{
        {"embedding_width", c.embedding_width},
        {"embedding_layout", layout_json(c.embedding_layout)},
        {"hidden_widths", c.hidden_widths},
        {"hidden_layouts", hidden_layouts},
        {"final_layout", layout_json(c.final_layout)},
        {"init_scale", c.init_scale},
    };
    json training{
        {"mode", mode_name(c.mode)},
        {"structure", c.structure ? "on" : "off"},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"prune_method", prune_method_name(c.prune_method)},
        {"prune_value", c.prune_value},
        {"margin_min_separation", c.margin.min_separation},
        {"margin_conflict_gain", c.margin.conflict_gain},
        {"margin_application", margin_application_name(c.margin.application)},
        {"recovery_fraction", c.recovery_fraction},
        {"max_negatives", c.max_negatives},
    };
    json serving{
        {"weights", json::array({c.weights.exposure, c.weights.click, c.weights.conversion})},
    };
    json eval{{"cutoffs", c.cutoffs}};
    json paths{{"data_dir", c.data_dir}, {"out_dir", c.out_dir}};
    return json{
        {"seed", c.seed},       {"generator", generator}, {"model", model},
        {"training", training}, {"serving", serving},     {"eval", eval},
        {"paths", paths},
    };
}

int category_of(const json& j) {
    if (j.is_object()) return 0;
    if (j.is_array()) return 1;
    if (j.is_string()) return 2;
    if (j.is_number()) return 3;
    return 4;
}

void merge_into(json& base, const json& incoming, const std::string& prefix) {
    if (!incoming.is_object())
        throw ConfigError("config: " + (prefix.empty() ? std::string("the document") : prefix) +
                          " must be a JSON object");
    for (const auto& [key, value] : incoming.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        auto it = base.find(key);
        if (it == base.end()) throw ConfigError("config: unknown key \"" + path + "\"");
        if (it->is_object()) {
            merge_into(*it, value, path);
        } else {
            if (category_of(*it) != category_of(value))
                throw ConfigError("config: wrong value type for \"" + path + "\"");
            *it = value;
        }
    }
}

void apply_override(json& doc, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects dotted.path=value, got \"" + spec + "\"");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw; // bare words like csmf or on

    json* node = &doc;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        auto it = node->find(key);
        if (it == node->end())
            throw ConfigError("--set: unknown key \"" + path.substr(0, dot) + "\"");
        if (dot == std::string::npos) {
            if (it->is_object())
                throw ConfigError("--set: \"" + path + "\" is a section, not a setting");
            if (category_of(*it) != category_of(value))
                throw ConfigError("--set: wrong value type for \"" + path + "\"");
            *it = value;
            return;
        }
        if (!it->is_object())
            throw ConfigError("--set: \"" + path.substr(0, dot) + "\" is not a section");
        node = &*it;
        pos = dot + 1;
    }
}

std::size_t get_count(const json& section, const std::string& where, const char* key) {
    const json& v = section.at(key);
    if (!nonneg_int(v))
        throw ConfigError("config: " + where + "." + key + " must be a non-negative integer");
    return v.get<std::size_t>();
}

double get_number(const json& section, const std::string& where, const char* key) {
    const json& v = section.at(key);
    if (!v.is_number())
        throw ConfigError("config: " + where + "." + key + " must be a number");
    return v.get<double>();
}

std::string get_string(const json& section, const std::string& where, const char* key) {
    const json& v = section.at(key);
    if (!v.is_string())
        throw ConfigError("config: " + where + "." + key + " must be a string");
    return v.get<std::string>();
}

std::vector<std::size_t> get_counts(const json& section, const std::string& where,
                                    const char* key) {
    const json& v = section.at(key);
    if (!v.is_array())
        throw ConfigError("config: " + where + "." + key + " must be an array");
    std::vector<std::size_t> out;
    for (const json& e : v) {
        if (!nonneg_int(e))
            throw ConfigError("config: " + where + "." + key +
                              " entries must be non-negative integers");
        out.push_back(e.get<std::size_t>());
    }
    return out;
}

RunConfig config_from_document(const json& doc) {
    RunConfig c;
    if (!nonneg_int(doc.at("seed")))
        throw ConfigError("config: seed must be a non-negative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();

    const json& gen = doc.at("generator");
    c.generator.users = get_count(gen, "generator", "users");
    c.generator.items = get_count(gen, "generator", "items");
    c.generator.requests_per_user = get_count(gen, "generator", "requests_per_user");
    c.generator.exposed_per_request = get_count(gen, "generator", "exposed_per_request");
    c.generator.unexposed_per_request = get_count(gen, "generator", "unexposed_per_request");
    c.generator.latent_dim = get_count(gen, "generator", "latent_dim");
    c.generator.rho_conflict = get_number(gen, "generator", "rho_conflict");
    c.generator.click_rate = get_number(gen, "generator", "click_rate");
    c.generator.conversion_rate = get_number(gen, "generator", "conversion_rate");
    const json& split = gen.at("split_tick");
    if (!split.is_number_integer())
        throw ConfigError("config: generator.split_tick must be an integer");
    c.generator.split_tick = split.get<std::int64_t>();
    c.generator.seed = c.seed;

    const json& model = doc.at("model");
    c.embedding_width = get_count(model, "model", "embedding_width");
    c.embedding_layout = layout_from(model.at("embedding_layout"), "model.embedding_layout");
    c.hidden_widths = get_counts(model, "model", "hidden_widths");
    const json& hl = model.at("hidden_layouts");
    if (!hl.is_array()) throw ConfigError("config: model.hidden_layouts must be an array");
    c.hidden_layouts.clear();
    for (std::size_t i = 0; i < hl.size(); ++i)
        c.hidden_layouts.push_back(
            layout_from(hl[i], "model.hidden_layouts[" + std::to_string(i) + "]"));
    c.final_layout = layout_from(model.at("final_layout"), "model.final_layout");
    c.init_scale = get_number(model, "model", "init_scale");

    const json& training = doc.at("training");
    c.mode = mode_from_name(get_string(training, "training", "mode"));
    const std::string structure = get_string(training, "training", "structure");
    if (structure == "on")
        c.structure = true;
    else if (structure == "off")
        c.structure = false;
    else
        throw ConfigError("config: training.structure must be \"on\" or \"off\"");
    const json& epochs = training.at("epochs");
    if (!epochs.is_array() || epochs.size() != kStageCount)
        throw ConfigError("config: training.epochs must be an array of " +
                          std::to_string(kStageCount) + " counts");
    for (std::size_t i = 0; i < kStageCount; ++i) {
        if (!nonneg_int(epochs[i]))
            throw ConfigError("config: training.epochs entries must be non-negative integers");
        c.epochs[i] = epochs[i].get<int>();
    }
    c.batch_size = get_count(training, "training", "batch_size");
    c.learning_rate = get_number(training, "training", "learning_rate");
    c.prune_method = prune_method_from_name(get_string(training, "training", "prune_method"));
    c.prune_value = get_number(training, "training", "prune_value");
    c.margin.min_separation = get_number(training, "training", "margin_min_separation");
    c.margin.conflict_gain = get_number(training, "training", "margin_conflict_gain");
    c.margin.application =
        margin_application_from_name(get_string(training, "training", "margin_application"));
    c.recovery_fraction = get_number(training, "training", "recovery_fraction");
    c.max_negatives = get_count(training, "training", "max_negatives");

    const json& serving = doc.at("serving");
    const json& weights = serving.at("weights");
    if (!weights.is_array() || weights.size() != kStageCount)
        throw ConfigError("config: serving.weights must be an array of " +
                          std::to_string(kStageCount) + " numbers");
    for (const json& w : weights)
        if (!w.is_number()) throw ConfigError("config: serving.weights must be numbers");
    c.weights.exposure = weights[0].get<double>();
    c.weights.click = weights[1].get<double>();
    c.weights.conversion = weights[2].get<double>();

    c.cutoffs = get_counts(doc.at("eval"), "eval", "cutoffs");

    const json& paths = doc.at("paths");
    c.data_dir = get_string(paths, "paths", "data_dir");
    c.out_dir = get_string(paths, "paths", "out_dir");
    return c;
}

} // namespace

void RunConfig::validate() const {
    generator_config().validate();
    pipeline_config().validate();
    weights.validate();
    if (data_dir.empty() || out_dir.empty())
        throw ConfigError("config: paths.data_dir and paths.out_dir must be nonempty");
}

std::string RunConfig::to_json() const { return to_document(*this).dump(2) + "\n"; }

ModelSpec RunConfig::model_spec() const {
    ModelSpec spec;
    spec.user.categoricals = {
        CategoricalFeatureSpec{"user_id", generator.users, embedding_width, embedding_layout}};
    spec.user.dense_count = kGeneratedDenseCount;
    spec.item.categoricals = {
        CategoricalFeatureSpec{"item_id", generator.items, embedding_width, embedding_layout}};
    spec.item.dense_count = kGeneratedDenseCount;
    spec.hidden_widths = hidden_widths;
    spec.hidden_layouts = hidden_layouts;
    spec.final_layout = final_layout;
    spec.init_scale = init_scale;
    spec.structural = structure;
    return spec;
}

GeneratorConfig RunConfig::generator_config() const {
    GeneratorConfig g = generator;
    g.seed = seed;
    return g;
}

PipelineConfig RunConfig::pipeline_config() const {
    PipelineConfig p;
    p.model = model_spec();
    p.epochs = epochs;
    p.batch_size = batch_size;
    p.learning_rate = learning_rate;
    p.prune_method = prune_method;
    p.prune_value = prune_value;
    p.margin = margin;
    p.recovery_fraction = recovery_fraction;
    p.max_negatives = max_negatives;
    p.seed = seed;
    p.mode = mode;
    p.eval_cutoffs = cutoffs;
    p.config_echo = to_json();
    return p;
}

EvalSpec RunConfig::eval_spec() const { return EvalSpec{cutoffs, weights}; }

RunConfig build_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    json doc = to_document(RunConfig{});
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw IoError("cannot open config file " + config_path);
        json file = json::parse(is, nullptr, false);
        if (file.is_discarded())
            throw ParseError("config file " + config_path + " is not valid JSON");
        merge_into(doc, file, "");
    }
    if (const char* env = std::getenv("CSMF_SEED")) {
        json v = json::parse(env, nullptr, false);
        if (v.is_discarded() || !v.is_number_unsigned())
            throw ConfigError("CSMF_SEED must be a non-negative integer");
        doc["seed"] = v;
    }
    for (const std::string& spec : overrides) apply_override(doc, spec);
    RunConfig config = config_from_document(doc);
    config.validate();
    return config;
}

} // namespace csmf
