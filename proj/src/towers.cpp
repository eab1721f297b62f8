#include "csmf/towers.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csmf/digest.hpp"
#include "csmf/errors.hpp"

namespace csmf {

void ModelSpec::validate() const {
    if (hidden_widths.size() != hidden_layouts.size()) {
        throw ConfigError("ModelSpec: one layout per hidden layer required");
    }
    for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
        hidden_layouts[i].validate();
        if (hidden_layouts[i].width() != hidden_widths[i]) {
            throw ConfigError("ModelSpec: hidden layout width mismatch at layer " +
                              std::to_string(i));
        }
    }
    final_layout.validate();
    if (init_scale <= 0.0) throw ConfigError("ModelSpec: init_scale must be positive");
    for (const TowerSpec* t : {&user, &item}) {
        if (t->categoricals.empty() && t->dense_count == 0) {
            throw ConfigError("ModelSpec: tower has no input features");
        }
        for (const auto& c : t->categoricals) {
            c.layout.validate();
            if (c.layout.width() != c.width) {
                throw ConfigError("ModelSpec: embedding layout width mismatch for " + c.name);
            }
            if (c.vocab == 0) throw ConfigError("ModelSpec: empty vocabulary for " + c.name);
        }
    }
}

namespace {

Tower build_tower(const TowerSpec& spec, const ModelSpec& model_spec, RngStream& rng) {
    Tower tower;
    tower.dense_count = spec.dense_count;
    for (const auto& c : spec.categoricals) {
        EmbeddingTable table;
        table.name = c.name;
        table.table = gaussian_init(rng, c.vocab, c.width, model_spec.init_scale);
        table.state.assign(table.table.size(), ParamState::trainable(Stage::Exposure));
        table.layout = c.layout;
        tower.embeddings.push_back(std::move(table));

        const std::vector<Stage> stages = c.layout.unit_stages();
        tower.input_stages.insert(tower.input_stages.end(), stages.begin(), stages.end());
    }
    // Dense features are raw inputs available from the first stage on.
    tower.input_stages.insert(tower.input_stages.end(), spec.dense_count, Stage::Exposure);

    std::vector<Stage> current = tower.input_stages;
    for (std::size_t i = 0; i < model_spec.hidden_widths.size(); ++i) {
        MaskedLayer layer = build_layer(current, model_spec.hidden_layouts[i], rng,
                                        model_spec.init_scale, Activation::Relu,
                                        model_spec.structural);
        current = model_spec.hidden_layouts[i].unit_stages();
        tower.layers.push_back(std::move(layer));
    }
    tower.layers.push_back(build_layer(current, model_spec.final_layout, rng,
                                       model_spec.init_scale, Activation::Identity,
                                       model_spec.structural));
    return tower;
}

void check_features(const Tower& tower, const EntityRef& e, const char* side) {
    if (e.dense == nullptr || e.cats == nullptr) {
        throw DataError(std::string("ingestion: missing feature payload for ") + side);
    }
    if (e.dense->size() != tower.dense_count) {
        throw DataError(std::string("ingestion: ") + side + " dense feature count " +
                        std::to_string(e.dense->size()) + " does not match " +
                        std::to_string(tower.dense_count));
    }
    if (e.cats->size() != tower.embeddings.size()) {
        throw DataError(std::string("ingestion: ") + side + " categorical feature count " +
                        std::to_string(e.cats->size()) + " does not match " +
                        std::to_string(tower.embeddings.size()));
    }
}

} // namespace

TwoTowerModel build_model(const ModelSpec& spec, RngStream& rng) {
    spec.validate();
    TwoTowerModel model;
    model.user = build_tower(spec.user, spec, rng);
    model.item = build_tower(spec.item, spec, rng);
    model.final_layout = spec.final_layout;
    model.structural = spec.structural;
    return model;
}

const Tower& tower_of(const TwoTowerModel& model, Side side) {
    return side == Side::User ? model.user : model.item;
}
Tower& tower_of(TwoTowerModel& model, Side side) {
    return side == Side::User ? model.user : model.item;
}

Matrix encode_batch(const Tower& tower, const std::vector<EntityRef>& entities,
                    Stage active_prefix, bool structural, TowerTrace* trace) {
    Matrix input(entities.size(), tower.input_width());
    for (std::size_t r = 0; r < entities.size(); ++r) {
        const EntityRef& e = entities[r];
        check_features(tower, e, "entity");
        double* out = input.values.data() + r * input.cols;
        std::size_t offset = 0;
        for (std::size_t f = 0; f < tower.embeddings.size(); ++f) {
            const EmbeddingTable& emb = tower.embeddings[f];
            const std::size_t width = emb.table.cols;
            for (std::int64_t id : (*e.cats)[f]) {
                if (id < 0 || static_cast<std::size_t>(id) >= emb.table.rows) {
                    throw DataError("ingestion: id " + std::to_string(id) +
                                    " out of vocabulary for feature " + emb.name);
                }
                const double* row = emb.table.values.data() + static_cast<std::size_t>(id) * width;
                if (structural) {
                    for (std::size_t c = 0; c < width; ++c) out[offset + c] += row[c];
                } else {
                    const ParamState* st =
                        emb.state.data() + static_cast<std::size_t>(id) * width;
                    for (std::size_t c = 0; c < width; ++c) {
                        out[offset + c] += st[c].contributes(active_prefix) ? row[c] : 0.0;
                    }
                }
            }
            // Coordinates beyond the prefix are masked to exactly 0.
            for (std::size_t c = emb.layout.prefix_width(active_prefix); c < width; ++c) {
                out[offset + c] = 0.0;
            }
            offset += width;
        }
        for (std::size_t d = 0; d < tower.dense_count; ++d) {
            out[offset + d] = (*e.dense)[d];
        }
    }

    if (trace) trace->input = input;
    Matrix current = std::move(input);
    for (const MaskedLayer& layer : tower.layers) {
        current = layer_forward_batch(layer, current, active_prefix);
        if (trace) trace->activations.push_back(current);
    }
    return current;
}

std::vector<double> encode(const TwoTowerModel& model, Side side, const EntityFeatures& features,
                           Stage active_prefix) {
    const Tower& tower = tower_of(model, side);
    Matrix out =
        encode_batch(tower, {EntityRef(features)}, active_prefix, model.structural, nullptr);
    return {out.values.begin(), out.values.end()};
}

double score(std::span<const double> user_vec, std::span<const double> item_vec, Stage objective,
             const BlockLayout& layout) {
    if (user_vec.size() != layout.width() || item_vec.size() != layout.width()) {
        throw ShapeError("score: vector width does not match layout");
    }
    const std::size_t live = layout.prefix_width(objective);
    double acc = 0.0;
    for (std::size_t i = 0; i < live; ++i) acc += user_vec[i] * item_vec[i];
    return acc;
}

std::array<double, kStageCount> stage_scores(const TwoTowerModel& model,
                                             const EntityFeatures& user,
                                             const EntityFeatures& item) {
    std::array<double, kStageCount> out{};
    for (Stage s : kStages) {
        std::vector<double> u = encode(model, Side::User, user, s);
        std::vector<double> v = encode(model, Side::Item, item, s);
        out[stage_index(s)] = score(u, v, s, model.final_layout);
    }
    return out;
}

void ServingWeights::validate() const {
    if (exposure < 0.0 || click < 0.0 || conversion < 0.0) {
        throw ConfigError("serving weights must be non-negative");
    }
    if (exposure == 0.0 && click == 0.0 && conversion == 0.0) {
        throw ConfigError("serving weights must not all be zero");
    }
}

std::vector<double> weighted_user_vector(const TwoTowerModel& model, const EntityFeatures& user,
                                         const ServingWeights& weights) {
    weights.validate();
    std::vector<double> vec = encode(model, Side::User, user, Stage::Conversion);
    const auto scales = weights.segment_scales();
    for (Stage s : kStages) {
        const std::size_t begin = model.final_layout.offset(s);
        const std::size_t end = begin + model.final_layout.size(s);
        for (std::size_t i = begin; i < end; ++i) vec[i] *= scales[stage_index(s)];
    }
    return vec;
}

ServingExport export_serving_vectors(const TwoTowerModel& model,
                                     const std::vector<KeyedEntity>& users,
                                     const std::vector<KeyedEntity>& items,
                                     const ServingWeights& weights) {
    if (!model.training_complete) {
        throw LifecycleError("export_serving_vectors: model training is not complete");
    }
    weights.validate();
    const auto scales = weights.segment_scales();
    const std::size_t width = model.final_layout.width();

    ServingExport out;
    out.users.vectors = Matrix(users.size(), width);
    for (std::size_t r = 0; r < users.size(); ++r) {
        out.users.ids.push_back(users[r].id);
        Matrix vec = encode_batch(model.user, {users[r].features}, Stage::Conversion,
                                  model.structural, nullptr);
        for (Stage s : kStages) {
            const std::size_t begin = model.final_layout.offset(s);
            const std::size_t end = begin + model.final_layout.size(s);
            for (std::size_t i = begin; i < end; ++i) {
                out.users.vectors(r, i) = vec.values[i] * scales[stage_index(s)];
            }
        }
    }
    out.items.vectors = Matrix(items.size(), width);
    for (std::size_t r = 0; r < items.size(); ++r) {
        out.items.ids.push_back(items[r].id);
        Matrix vec = encode_batch(model.item, {items[r].features}, Stage::Conversion,
                                  model.structural, nullptr);
        for (std::size_t i = 0; i < width; ++i) out.items.vectors(r, i) = vec.values[i];
    }
    return out;
}

namespace {

template <typename T> void write_le(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little,
                  "vector files assume a little-endian host");
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T> T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw ParseError("vector file: truncated record");
    return v;
}

} // namespace

void write_vector_file(const std::string& path, const VectorSet& set, const BlockLayout& layout) {
    if (set.vectors.rows != set.ids.size()) {
        throw ShapeError("write_vector_file: id/vector count mismatch");
    }
    if (set.vectors.cols != layout.width()) {
        throw ShapeError("write_vector_file: vector width does not match layout");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_vector_file: cannot open " + path);
    os << "csmf-vectors v1 " << layout.width() << ' ' << layout.sizes[0] << ' ' << layout.sizes[1]
       << ' ' << layout.sizes[2] << '\n';
    for (std::size_t r = 0; r < set.vectors.rows; ++r) {
        write_le<std::int64_t>(os, set.ids[r]);
        for (std::size_t c = 0; c < set.vectors.cols; ++c) {
            write_le<float>(os, static_cast<float>(set.vectors(r, c)));
        }
    }
    if (!os) throw IoError("write_vector_file: write failed for " + path);
}

VectorFile read_vector_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_vector_file: cannot open " + path);
    std::string header;
    if (!std::getline(is, header)) throw ParseError("vector file: missing header");
    std::istringstream hs(header);
    std::string magic, version;
    std::size_t width = 0, e = 0, c = 0, v = 0;
    hs >> magic >> version >> width >> e >> c >> v;
    if (!hs || magic != "csmf-vectors" || version != "v1") {
        throw ParseError("vector file: unrecognized header \"" + header + "\"");
    }
    if (e + c + v != width) throw ParseError("vector file: block sizes do not sum to width");

    VectorFile out;
    out.layout = BlockLayout(e, c, v);
    std::vector<std::vector<float>> rows;
    while (true) {
        std::int64_t id;
        is.read(reinterpret_cast<char*>(&id), sizeof(id));
        if (is.gcount() == 0 && is.eof()) break;
        if (!is) throw ParseError("vector file: truncated record");
        out.set.ids.push_back(id);
        std::vector<float> row(width);
        is.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(width * sizeof(float)));
        if (!is) throw ParseError("vector file: truncated record");
        rows.push_back(std::move(row));
    }
    out.set.vectors = Matrix(rows.size(), width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t i = 0; i < width; ++i) out.set.vectors(r, i) = rows[r][i];
    }
    return out;
}

namespace {

template <typename Model, typename Fn>
void visit_params_impl(Model& model, const Fn& fn) {
    auto walk_tower = [&](auto& tower) {
        for (auto& table : tower.embeddings) {
            for (std::size_t i = 0; i < table.table.values.size(); ++i)
                fn(table.table.values[i], table.state[i]);
        }
        for (auto& layer : tower.layers) {
            for (std::size_t i = 0; i < layer.weights.values.size(); ++i)
                fn(layer.weights.values[i], layer.weight_state[i]);
            for (std::size_t o = 0; o < layer.bias.size(); ++o)
                fn(layer.bias[o], layer.bias_state[o]);
        }
    };
    walk_tower(model.user);
    walk_tower(model.item);
}

} // namespace

void visit_params(const TwoTowerModel& model,
                  const std::function<void(double, const ParamState&)>& fn) {
    visit_params_impl(model, fn);
}

void visit_params(TwoTowerModel& model, const std::function<void(double&, ParamState&)>& fn) {
    visit_params_impl(model, fn);
}

std::uint64_t value_digest(const TwoTowerModel& model) {
    Digest d;
    visit_params(model, [&](double v, const ParamState&) { d.update_double(v); });
    return d.value();
}

std::uint64_t state_digest(const TwoTowerModel& model, ParamKind kind, Stage stage) {
    Digest d;
    visit_params(model, [&](double v, const ParamState& st) {
        if (st.kind == kind && (st.stage == stage || st.zero_valued())) d.update_double(v);
    });
    return d.value();
}

std::size_t StateCensus::total() const {
    std::size_t n = structural_zero + zero_locked;
    for (std::size_t s = 0; s < kStageCount; ++s) n += trainable[s] + frozen[s];
    return n;
}

std::size_t StateCensus::total_trainable() const {
    return trainable[0] + trainable[1] + trainable[2];
}

StateCensus census(const TwoTowerModel& model) {
    StateCensus c;
    visit_params(model, [&](double, const ParamState& st) {
        switch (st.kind) {
        case ParamKind::StructuralZero: ++c.structural_zero; break;
        case ParamKind::ZeroLocked: ++c.zero_locked; break;
        case ParamKind::Trainable: ++c.trainable[stage_index(st.stage)]; break;
        case ParamKind::Frozen: ++c.frozen[stage_index(st.stage)]; break;
        }
    });
    return c;
}

} // namespace csmf
