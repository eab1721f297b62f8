#include "csmf/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "csmf/errors.hpp"

namespace csmf {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

// RNG derivation tags. Every stream a run uses is derived from the run seed
// alone, so a run resumed at a stage boundary derives exactly the streams the
// uninterrupted run would have used for the remaining stages.
constexpr std::uint64_t kTagInit = 0;
constexpr std::uint64_t kTagTrain = 10;    // + stage index
constexpr std::uint64_t kTagRecovery = 20; // + stage index
constexpr std::uint64_t kTagBaseline = 30; // + model index

} // namespace

const char* mode_name(PipelineMode mode) {
    switch (mode) {
    case PipelineMode::Csmf: return "csmf";
    case PipelineMode::MixedSingle: return "mixed_single";
    case PipelineMode::SeparatePerObjective: return "separate_per_objective";
    }
    return "?";
}

PipelineMode mode_from_name(const std::string& name) {
    if (name == "csmf") return PipelineMode::Csmf;
    if (name == "mixed_single") return PipelineMode::MixedSingle;
    if (name == "separate_per_objective") return PipelineMode::SeparatePerObjective;
    throw ConfigError("unknown pipeline mode \"" + name + "\"");
}

void PipelineConfig::validate() const {
    model.validate();
    for (int e : epochs)
        if (e < 1) throw ConfigError("pipeline: every stage needs at least one epoch");
    if (batch_size < 2) throw ConfigError("pipeline: batch_size must be at least 2");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("pipeline: learning_rate must be a non-negative number");
    if (prune_method == PruneMethod::CumulativePercentile) {
        if (!(prune_value > 0.0 && prune_value < 1.0))
            throw ConfigError("pipeline: cpp prune_value must lie in (0, 1)");
    } else if (!(prune_value >= 0.0 && prune_value < 1.0)) {
        throw ConfigError("pipeline: fixed_ratio prune_value must lie in [0, 1)");
    }
    margin.validate();
    if (!(recovery_fraction > 0.0 && recovery_fraction <= 1.0))
        throw ConfigError("pipeline: recovery_fraction must lie in (0, 1]");
    if (max_negatives == 0) throw ConfigError("pipeline: max_negatives must be positive");
    if (eval_cutoffs.empty()) throw ConfigError("pipeline: at least one eval cutoff required");
    for (std::size_t n : eval_cutoffs)
        if (n == 0) throw ConfigError("pipeline: eval cutoffs must be positive");
}

ModelGrads ModelGrads::like(const TwoTowerModel& model) {
    ModelGrads g;
    auto tower = [](const Tower& t, std::vector<Matrix>& emb, std::vector<LayerGrads>& layers) {
        for (const EmbeddingTable& table : t.embeddings)
            emb.emplace_back(table.table.rows, table.table.cols);
        layers.resize(t.layers.size());
        for (std::size_t i = 0; i < t.layers.size(); ++i) layers[i].init_like(t.layers[i]);
    };
    tower(model.user, g.user_embeddings, g.user_layers);
    tower(model.item, g.item_embeddings, g.item_layers);
    return g;
}

void ModelGrads::zero() {
    for (Matrix& m : user_embeddings) m.zero();
    for (Matrix& m : item_embeddings) m.zero();
    for (LayerGrads& l : user_layers) {
        l.weights.zero();
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    for (LayerGrads& l : item_layers) {
        l.weights.zero();
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

AdamState AdamState::like(const TwoTowerModel& model) {
    return AdamState{ModelGrads::like(model), ModelGrads::like(model), 0};
}

namespace {

void adam_update(double& value, const ParamState& state, double g, double& m, double& v,
                 double lr, double c1, double c2, Stage prefix) {
    if (!state.accepts_grad(prefix)) return;
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    value -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
}

} // namespace

void adam_step(TwoTowerModel& model, const ModelGrads& grads, AdamState& state, double lr,
               Stage prefix) {
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw ConfigError("adam: learning rate must be a non-negative number");
    ++state.step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

    auto tower = [&](Tower& t, const std::vector<Matrix>& emb_g, std::vector<Matrix>& emb_m,
                     std::vector<Matrix>& emb_v, const std::vector<LayerGrads>& lay_g,
                     std::vector<LayerGrads>& lay_m, std::vector<LayerGrads>& lay_v) {
        if (emb_g.size() != t.embeddings.size() || lay_g.size() != t.layers.size())
            throw ShapeError("adam: gradient buffers do not align with the model");
        for (std::size_t e = 0; e < t.embeddings.size(); ++e) {
            EmbeddingTable& table = t.embeddings[e];
            if (emb_g[e].values.size() != table.table.values.size())
                throw ShapeError("adam: embedding gradient shape mismatch");
            for (std::size_t i = 0; i < table.table.values.size(); ++i)
                adam_update(table.table.values[i], table.state[i], emb_g[e].values[i],
                            emb_m[e].values[i], emb_v[e].values[i], lr, c1, c2, prefix);
        }
        for (std::size_t l = 0; l < t.layers.size(); ++l) {
            MaskedLayer& layer = t.layers[l];
            if (lay_g[l].weights.values.size() != layer.weights.values.size())
                throw ShapeError("adam: layer gradient shape mismatch");
            for (std::size_t i = 0; i < layer.weights.values.size(); ++i)
                adam_update(layer.weights.values[i], layer.weight_state[i],
                            lay_g[l].weights.values[i], lay_m[l].weights.values[i],
                            lay_v[l].weights.values[i], lr, c1, c2, prefix);
            for (std::size_t o = 0; o < layer.bias.size(); ++o)
                adam_update(layer.bias[o], layer.bias_state[o], lay_g[l].bias[o],
                            lay_m[l].bias[o], lay_v[l].bias[o], lr, c1, c2, prefix);
        }
    };
    tower(model.user, grads.user_embeddings, state.m.user_embeddings, state.v.user_embeddings,
          grads.user_layers, state.m.user_layers, state.v.user_layers);
    tower(model.item, grads.item_embeddings, state.m.item_embeddings, state.v.item_embeddings,
          grads.item_layers, state.m.item_layers, state.v.item_layers);
}

namespace {

void tower_backward(const Tower& tower, const TowerTrace& trace, const Matrix& grad_out,
                    const std::vector<EntityRef>& entities, Stage prefix,
                    std::vector<Matrix>& emb_grads, std::vector<LayerGrads>& layer_grads) {
    Matrix g = grad_out;
    for (std::size_t li = tower.layers.size(); li-- > 0;) {
        const Matrix& input = li == 0 ? trace.input : trace.activations[li - 1];
        g = layer_backward_batch(tower.layers[li], input, trace.activations[li], g, prefix,
                                 layer_grads[li]);
    }
    std::size_t offset = 0;
    for (std::size_t t = 0; t < tower.embeddings.size(); ++t) {
        const EmbeddingTable& table = tower.embeddings[t];
        const std::size_t width = table.table.cols;
        Matrix& tg = emb_grads[t];
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::int64_t id : (*entities[r].cats)[t]) {
                const auto row = static_cast<std::size_t>(id);
                for (std::size_t c = 0; c < width; ++c) {
                    if (table.cell_state(row, c).accepts_grad(prefix))
                        tg(row, c) += g(r, offset + c);
                }
            }
        }
        offset += width;
    }
}

void add_pair_grads(std::span<double> d_user, std::span<double> d_item,
                    std::span<const double> user_vec, std::span<const double> item_vec, double g,
                    std::size_t width) {
    for (std::size_t c = 0; c < width; ++c) {
        d_user[c] += g * item_vec[c];
        d_item[c] += g * user_vec[c];
    }
}

} // namespace

double batch_gradients(const TwoTowerModel& model, const ContrastiveBatch& batch,
                       Stage loss_stage, Stage encode_prefix, Stage score_objective,
                       const MarginConfig& margin, ModelGrads& grads) {
    const BlockLayout& layout = model.final_layout;
    std::vector<EntityRef> user_refs;
    user_refs.reserve(batch.examples.size());
    for (const ContrastiveExample& ex : batch.examples)
        user_refs.emplace_back(ex.request->user_dense, ex.request->user_cats);
    std::vector<EntityRef> item_refs;
    item_refs.reserve(batch.pool.size());
    for (const PoolItem& p : batch.pool) item_refs.emplace_back(p.item->dense, p.item->cats);

    TowerTrace user_trace, item_trace;
    const Matrix user_out =
        encode_batch(model.user, user_refs, encode_prefix, model.structural, &user_trace);
    const Matrix item_out =
        encode_batch(model.item, item_refs, encode_prefix, model.structural, &item_trace);

    // Upstream scores feeding the margins. Structural connectivity makes the
    // committed prefixes of the current vectors bit-identical to dedicated
    // prefix passes; without it the upstream serving scores need their own
    // masked passes.
    Matrix up_user_d, up_item_d, up_user_o, up_item_o;
    const bool needs_upstream = loss_stage != Stage::Exposure;
    if (needs_upstream && !model.structural) {
        up_user_d = encode_batch(model.user, user_refs, Stage::Exposure, false, nullptr);
        up_item_d = encode_batch(model.item, item_refs, Stage::Exposure, false, nullptr);
        if (loss_stage == Stage::Conversion) {
            up_user_o = encode_batch(model.user, user_refs, Stage::Click, false, nullptr);
            up_item_o = encode_batch(model.item, item_refs, Stage::Click, false, nullptr);
        }
    }
    auto upstream = [&](std::size_t u, std::size_t p) {
        const double s_d = model.structural
                               ? score(user_out.row(u), item_out.row(p), Stage::Exposure, layout)
                               : score(up_user_d.row(u), up_item_d.row(p), Stage::Exposure, layout);
        if (loss_stage == Stage::Click) return s_d;
        const double s_o = model.structural
                               ? score(user_out.row(u), item_out.row(p), Stage::Click, layout)
                               : score(up_user_o.row(u), up_item_o.row(p), Stage::Click, layout);
        return s_d * s_o; // conversion margins use the cascade product
    };

    const std::size_t width = layout.prefix_width(score_objective);
    Matrix d_user(user_out.rows, user_out.cols);
    Matrix d_item(item_out.rows, item_out.cols);
    double loss_sum = 0.0;
    std::vector<double> s_negs, margins;
    for (std::size_t i = 0; i < batch.examples.size(); ++i) {
        const ContrastiveExample& ex = batch.examples[i];
        const double s_pos =
            score(user_out.row(i), item_out.row(ex.positive), score_objective, layout);
        s_negs.clear();
        for (std::size_t nj : ex.negatives)
            s_negs.push_back(score(user_out.row(i), item_out.row(nj), score_objective, layout));

        LossResult loss;
        if (loss_stage == Stage::Exposure) {
            loss = softmax_loss(s_pos, s_negs);
        } else {
            const double up_pos = upstream(i, ex.positive);
            margins.clear();
            for (std::size_t nj : ex.negatives)
                margins.push_back(aml_margin(loss_stage, up_pos, upstream(i, nj), margin));
            loss = aml_loss(s_pos, s_negs, margins, margin.application);
        }
        loss_sum += loss.loss;

        add_pair_grads(d_user.row(i), d_item.row(ex.positive), user_out.row(i),
                       item_out.row(ex.positive), loss.grad_pos, width);
        for (std::size_t k = 0; k < ex.negatives.size(); ++k) {
            add_pair_grads(d_user.row(i), d_item.row(ex.negatives[k]), user_out.row(i),
                           item_out.row(ex.negatives[k]), loss.grad_negs[k], width);
        }
    }

    tower_backward(model.user, user_trace, d_user, user_refs, encode_prefix,
                   grads.user_embeddings, grads.user_layers);
    tower_backward(model.item, item_trace, d_item, item_refs, encode_prefix,
                   grads.item_embeddings, grads.item_layers);
    return loss_sum;
}

namespace {

struct PhaseSpec {
    std::string name;      // rng snapshot prefix
    Stage loss_stage;      // Exposure selects the plain softmax loss
    Stage encode_prefix;
    Stage score_objective;
    Stage negative_stage;  // Exposure adds request-local unexposed negatives
    int epochs;
    RngStream shuffle_rng;
    RngStream negative_rng;
};

TrainStats train_phase(TwoTowerModel& model, std::span<const PositiveExample> positives,
                       const PipelineConfig& config, PhaseSpec phase) {
    if (positives.empty())
        throw DataError("training: no positive examples for " + phase.name);

    TrainStats stats;
    stats.examples = positives.size();
    AdamState adam = AdamState::like(model);
    ModelGrads grads = ModelGrads::like(model);

    std::vector<std::size_t> order(positives.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<PositiveExample> batch;
    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j =
                i + static_cast<std::size_t>(phase.shuffle_rng.next_below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        double loss_sum = 0.0;
        std::size_t trained = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            if (len == 1 && order.size() > 1) continue; // drop a trailing singleton
            batch.clear();
            for (std::size_t k = 0; k < len; ++k) batch.push_back(positives[order[start + k]]);
            const ContrastiveBatch cb = assemble_negatives(batch, phase.negative_stage,
                                                           phase.negative_rng,
                                                           config.max_negatives);
            grads.zero();
            loss_sum += batch_gradients(model, cb, phase.loss_stage, phase.encode_prefix,
                                        phase.score_objective, config.margin, grads);
            adam_step(model, grads, adam, config.learning_rate, phase.encode_prefix);
            trained += len;
        }
        stats.epoch_losses.push_back(trained > 0 ? loss_sum / static_cast<double>(trained) : 0.0);
    }
    stats.streams.push_back(NamedRngSnapshot{phase.name + "/shuffle", phase.shuffle_rng.seed(),
                                             phase.shuffle_rng.position()});
    stats.streams.push_back(NamedRngSnapshot{phase.name + "/negatives",
                                             phase.negative_rng.seed(),
                                             phase.negative_rng.position()});
    return stats;
}

} // namespace

TrainStats train_stage(TwoTowerModel& model, std::span<const RequestRecord> records, Stage stage,
                       const PipelineConfig& config) {
    config.validate();
    if (census(model).trainable[stage_index(stage)] == 0)
        throw LifecycleError(std::string("train_stage: no trainable parameters for stage ") +
                             stage_name(stage));

    const std::vector<PositiveExample> positives = stage_view(records, stage);
    if (positives.empty())
        throw DataError(std::string("train_stage: stage ") + stage_name(stage) +
                        " has no positive examples");

    const RngStream root(config.seed);
    const std::uint64_t tag = kTagTrain + stage_index(stage);
    PhaseSpec phase{
        .name = std::string(stage_name(stage)) + "/train",
        // The exposure stage pre-trains the whole parameter space on the
        // full-width dot product; downstream stages train their own serving
        // score under their prefix.
        .loss_stage = stage,
        .encode_prefix = stage == Stage::Exposure ? Stage::Conversion : stage,
        .score_objective = stage == Stage::Exposure ? Stage::Conversion : stage,
        .negative_stage = stage,
        .epochs = config.epochs[stage_index(stage)],
        .shuffle_rng = root.derive(tag, 0),
        .negative_rng = root.derive(tag, 1),
    };
    return train_phase(model, positives, config, phase);
}

TrainStats recover_stage(TwoTowerModel& model, std::span<const RequestRecord> records, Stage stage,
                         const PipelineConfig& config) {
    config.validate();
    if (!model.stage_committed[stage_index(stage)] || model.stage_recovered[stage_index(stage)])
        throw LifecycleError(std::string("recover_stage: stage ") + stage_name(stage) +
                             " is not freshly committed");

    // Re-open the parameters this stage's commit retained. Under structural
    // connectivity only those writing into this stage's blocks can receive
    // gradient from the segment score; the rest stay frozen.
    std::size_t reopened = 0;
    const auto reopen = [&](ParamState& st, Stage target) {
        if (st.kind != ParamKind::Frozen || st.stage != stage) return;
        if (model.structural && target != stage) return;
        st = ParamState::trainable(stage);
        ++reopened;
    };
    for (Side side : {Side::User, Side::Item}) {
        Tower& tower = tower_of(model, side);
        for (EmbeddingTable& table : tower.embeddings) {
            for (std::size_t r = 0; r < table.table.rows; ++r)
                for (std::size_t c = 0; c < table.table.cols; ++c)
                    reopen(table.cell_state(r, c), table.layout.stage_of(c));
        }
        for (MaskedLayer& layer : tower.layers) {
            for (std::size_t o = 0; o < layer.out_width(); ++o) {
                const Stage target = layer.out_layout.stage_of(o);
                for (std::size_t i = 0; i < layer.in_width(); ++i)
                    reopen(layer.wstate(o, i), target);
                reopen(layer.bias_state[o], target);
            }
        }
    }
    if (reopened == 0)
        throw LifecycleError(std::string("recover_stage: stage ") + stage_name(stage) +
                             " retained no parameters");

    const std::vector<PositiveExample> positives = stage_view(records, stage);
    const RngStream root(config.seed);
    const std::uint64_t tag = kTagRecovery + stage_index(stage);
    PhaseSpec phase{
        .name = std::string(stage_name(stage)) + "/recovery",
        .loss_stage = stage,
        .encode_prefix = stage, // the stage's serving score, not the training one
        .score_objective = stage,
        .negative_stage = stage,
        .epochs = 1,
        .shuffle_rng = root.derive(tag, 1),
        .negative_rng = root.derive(tag, 2),
    };
    TrainStats stats = train_phase(model, positives, config, phase);

    visit_params(model, [&](double&, ParamState& st) {
        if (st.kind == ParamKind::Trainable && st.stage == stage) st = ParamState::frozen(stage);
    });
    model.stage_recovered[stage_index(stage)] = true;
    return stats;
}

void quantize_to_storage(TwoTowerModel& model) {
    visit_params(model, [](double& v, ParamState&) {
        v = static_cast<double>(static_cast<float>(v));
    });
}

namespace {

void freeze_all(TwoTowerModel& model) {
    visit_params(model, [](double&, ParamState& st) {
        if (st.kind == ParamKind::Trainable) st = ParamState::frozen(st.stage);
    });
}

std::string metrics_block(const std::optional<MetricsReport>& metrics, const char* label) {
    if (!metrics) return {};
    std::string out = std::string("  ") + label + "\n";
    std::string table = metrics->table();
    std::size_t pos = 0;
    while (pos < table.size()) {
        const std::size_t nl = table.find('\n', pos);
        out += "    " + table.substr(pos, nl - pos) + "\n";
        pos = nl + 1;
    }
    return out;
}

} // namespace

std::string StageReport::text() const {
    char buf[256];
    std::string out = std::string("stage=") + stage_name(stage) + " role=" + role +
                      " examples=" + std::to_string(examples) + "\n";
    for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "  epoch_loss[%zu]=%.6f\n", e + 1, epoch_losses[e]);
        out += buf;
    }
    if (pruning) {
        std::snprintf(buf, sizeof(buf), "  prune method=%s value=%g retained=%zu pruned=%zu\n",
                      prune_method_name(pruning->method), pruning->parameter,
                      pruning->total_retained(), pruning->total_pruned());
        out += buf;
        for (const GroupTransition& g : pruning->groups) {
            std::snprintf(buf, sizeof(buf),
                          "    group=%s size=%zu retained=%zu zero_locked=%zu handed_off=%zu "
                          "mass_total=%.6g mass_pruned=%.6g\n",
                          g.group.c_str(), g.group_size, g.retained, g.zero_locked, g.handed_off,
                          g.mass_total, g.mass_pruned);
            out += buf;
        }
    }
    out += metrics_block(post_prune_metrics, "post_prune_metrics");
    for (std::size_t e = 0; e < recovery_losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "  recovery_loss[%zu]=%.6f\n", e + 1, recovery_losses[e]);
        out += buf;
    }
    out += metrics_block(post_recovery_metrics, "post_recovery_metrics");
    return out;
}

std::string RunReport::text() const {
    std::string out = std::string("mode=") + mode_name(mode) + "\n";
    for (const StageReport& s : stages) out += s.text();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "census trainable=%zu/%zu/%zu frozen=%zu/%zu/%zu structural_zero=%zu "
                  "zero_locked=%zu\n",
                  final_census.trainable[0], final_census.trainable[1], final_census.trainable[2],
                  final_census.frozen[0], final_census.frozen[1], final_census.frozen[2],
                  final_census.structural_zero, final_census.zero_locked);
    out += buf;
    return out;
}

const TwoTowerModel& Checkpoint::model_for(const std::string& role) const {
    for (const CheckpointModel& m : models)
        if (m.role == role) return m.model;
    throw Error("checkpoint has no model with role \"" + role + "\"");
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'S', 'M', 'F', 'C', 'K', 'P', 'T'};

struct Writer {
    std::ofstream os;

    explicit Writer(const std::string& path) : os(path, std::ios::binary) {
        if (!os) throw IoError("cannot open " + path + " for writing");
    }
    void bytes(const void* p, std::size_t n) {
        os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void i64(std::int64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void values(std::span<const double> vs) {
        for (double v : vs) f32(static_cast<float>(v));
    }
    void states(std::span<const ParamState> sts) {
        for (const ParamState& st : sts) u8(st.to_byte());
    }
    void layout(const BlockLayout& l) {
        for (std::size_t s : l.sizes) u64(s);
    }
};

struct Reader {
    std::ifstream is;
    std::string path;

    explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
        if (!is) throw IoError("cannot open " + p);
    }
    void bytes(void* p, std::size_t n) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n)
            throw ParseError("checkpoint truncated: " + path);
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    void values(std::span<double> vs) {
        for (double& v : vs) v = static_cast<double>(f32());
    }
    void states(std::span<ParamState> sts) {
        for (ParamState& st : sts) st = ParamState::from_byte(u8());
    }
    BlockLayout layout() {
        BlockLayout l;
        for (std::size_t i = 0; i < kStageCount; ++i) l.sizes[i] = u64();
        return l;
    }
};

void write_tower(Writer& w, const Tower& tower) {
    w.u64(tower.dense_count);
    w.u32(static_cast<std::uint32_t>(tower.embeddings.size()));
    for (const EmbeddingTable& t : tower.embeddings) {
        w.str(t.name);
        w.u64(t.table.rows);
        w.u64(t.table.cols);
        w.layout(t.layout);
        w.values(t.table.values);
        w.states(t.state);
    }
    w.u32(static_cast<std::uint32_t>(tower.layers.size()));
    for (const MaskedLayer& l : tower.layers) {
        w.u8(static_cast<std::uint8_t>(l.activation));
        w.u8(l.structural ? 1 : 0);
        w.u64(l.in_stages.size());
        for (Stage s : l.in_stages) w.u8(static_cast<std::uint8_t>(s));
        w.layout(l.out_layout);
        w.u64(l.weights.rows);
        w.u64(l.weights.cols);
        w.values(l.weights.values);
        w.states(l.weight_state);
        w.values(l.bias);
        w.states(l.bias_state);
    }
}

Tower read_tower(Reader& r) {
    Tower tower;
    tower.dense_count = r.u64();
    const std::uint32_t tables = r.u32();
    for (std::uint32_t i = 0; i < tables; ++i) {
        EmbeddingTable t;
        t.name = r.str();
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        t.layout = r.layout();
        t.layout.validate();
        if (t.layout.width() != cols)
            throw ParseError("checkpoint: embedding layout does not match width");
        t.table = Matrix(rows, cols);
        r.values(t.table.values);
        t.state.resize(rows * cols);
        r.states(t.state);
        const std::vector<Stage> stages = t.layout.unit_stages();
        tower.input_stages.insert(tower.input_stages.end(), stages.begin(), stages.end());
        tower.embeddings.push_back(std::move(t));
    }
    tower.input_stages.insert(tower.input_stages.end(), tower.dense_count, Stage::Exposure);
    const std::uint32_t layers = r.u32();
    std::size_t expect_in = tower.input_stages.size();
    for (std::uint32_t i = 0; i < layers; ++i) {
        MaskedLayer l;
        const std::uint8_t act = r.u8();
        if (act > 1) throw ParseError("checkpoint: invalid activation byte");
        l.activation = static_cast<Activation>(act);
        l.structural = r.u8() != 0;
        const std::uint64_t in_n = r.u64();
        l.in_stages.resize(in_n);
        for (Stage& s : l.in_stages) {
            const std::uint8_t b = r.u8();
            if (b >= kStageCount) throw ParseError("checkpoint: invalid stage byte");
            s = static_cast<Stage>(b);
        }
        l.out_layout = r.layout();
        l.out_layout.validate();
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (rows != l.out_layout.width() || cols != in_n || cols != expect_in)
            throw ParseError("checkpoint: layer shape mismatch");
        l.weights = Matrix(rows, cols);
        r.values(l.weights.values);
        l.weight_state.resize(rows * cols);
        r.states(l.weight_state);
        l.bias.resize(rows);
        r.values(l.bias);
        l.bias_state.resize(rows);
        r.states(l.bias_state);
        expect_in = rows;
        tower.layers.push_back(std::move(l));
    }
    if (tower.layers.empty()) throw ParseError("checkpoint: tower without layers");
    return tower;
}

void check_zero_states(const TwoTowerModel& model) {
    visit_params(model, [](double v, const ParamState& st) {
        if (st.zero_valued() && v != 0.0)
            throw ParseError("checkpoint: zero-state parameter holds a nonzero value");
    });
}

} // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(checkpoint.version);
    w.u8(static_cast<std::uint8_t>(checkpoint.mode));
    w.u8(checkpoint.structural ? 1 : 0);
    w.u8(checkpoint.stages_done);
    w.u8(checkpoint.complete ? 1 : 0);
    w.str(checkpoint.config_echo);
    w.u32(static_cast<std::uint32_t>(checkpoint.rng.size()));
    for (const NamedRngSnapshot& s : checkpoint.rng) {
        w.str(s.name);
        w.u64(s.seed);
        w.u64(s.position);
    }
    w.u32(static_cast<std::uint32_t>(checkpoint.models.size()));
    for (const CheckpointModel& m : checkpoint.models) {
        w.str(m.role);
        w.u8(m.model.structural ? 1 : 0);
        w.u8(m.model.training_complete ? 1 : 0);
        for (bool b : m.model.stage_committed) w.u8(b ? 1 : 0);
        for (bool b : m.model.stage_recovered) w.u8(b ? 1 : 0);
        w.layout(m.model.final_layout);
        write_tower(w, m.model.user);
        write_tower(w, m.model.item);
    }
    w.os.flush();
    if (!w.os) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw ParseError(path + " is not a checkpoint file");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion)
        throw ParseError("incompatible checkpoint version " + std::to_string(ck.version) +
                         " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    const std::uint8_t mode = r.u8();
    if (mode > 2) throw ParseError("checkpoint: invalid mode byte");
    ck.mode = static_cast<PipelineMode>(mode);
    ck.structural = r.u8() != 0;
    ck.stages_done = r.u8();
    ck.complete = r.u8() != 0;
    ck.config_echo = r.str();
    const std::uint32_t rngs = r.u32();
    for (std::uint32_t i = 0; i < rngs; ++i) {
        NamedRngSnapshot s;
        s.name = r.str();
        s.seed = r.u64();
        s.position = r.u64();
        ck.rng.push_back(std::move(s));
    }
    const std::uint32_t models = r.u32();
    if (models == 0) throw ParseError("checkpoint: no models");
    for (std::uint32_t i = 0; i < models; ++i) {
        CheckpointModel m;
        m.role = r.str();
        m.model.structural = r.u8() != 0;
        m.model.training_complete = r.u8() != 0;
        for (std::size_t s = 0; s < kStageCount; ++s) m.model.stage_committed[s] = r.u8() != 0;
        for (std::size_t s = 0; s < kStageCount; ++s) m.model.stage_recovered[s] = r.u8() != 0;
        m.model.final_layout = r.layout();
        m.model.final_layout.validate();
        m.model.user = read_tower(r);
        m.model.item = read_tower(r);
        if (m.model.user.output_width() != m.model.final_layout.width() ||
            m.model.item.output_width() != m.model.final_layout.width())
            throw ParseError("checkpoint: tower output does not match the final layout");
        check_zero_states(m.model);
        ck.models.push_back(std::move(m));
    }
    if (r.is.peek() != std::ifstream::traits_type::eof())
        throw ParseError("checkpoint: trailing bytes after the last model");
    return ck;
}

namespace {

std::vector<RequestRecord> concat_records(std::span<const RequestRecord> a,
                                          std::span<const RequestRecord> b) {
    std::vector<RequestRecord> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

Checkpoint make_checkpoint(const PipelineConfig& config, const TwoTowerModel& model,
                           std::vector<NamedRngSnapshot> rng, std::uint8_t stages_done,
                           bool complete) {
    Checkpoint ck;
    ck.mode = config.mode;
    ck.structural = model.structural;
    ck.stages_done = stages_done;
    ck.complete = complete;
    ck.config_echo = config.config_echo;
    ck.rng = std::move(rng);
    ck.models.push_back(CheckpointModel{"primary", model});
    return ck;
}

const char* boundary_filename(Stage stage) {
    switch (stage) {
    case Stage::Exposure: return "checkpoint.exposure.bin";
    case Stage::Click: return "checkpoint.click.bin";
    case Stage::Conversion: return "checkpoint.bin";
    }
    return "checkpoint.bin";
}

RunOutputs run_csmf(const PipelineConfig& config, std::span<const RequestRecord> train,
                    std::span<const RequestRecord> test, const std::string& out_dir,
                    TwoTowerModel model, std::vector<NamedRngSnapshot> rng_log,
                    std::uint8_t stages_done) {
    const std::vector<RequestRecord> catalog = concat_records(train, test);
    const RngStream root(config.seed);

    RunOutputs out;
    out.report.mode = config.mode;

    for (Stage stage : kStages) {
        if (stage_index(stage) < stages_done) continue;

        StageReport report;
        report.stage = stage;
        TrainStats ts = train_stage(model, train, stage, config);
        report.examples = ts.examples;
        report.epoch_losses = ts.epoch_losses;
        for (auto& s : ts.streams) rng_log.push_back(std::move(s));

        if (stage != Stage::Conversion) {
            report.pruning = commit_stage(model, stage, config.prune_method, config.prune_value);
            report.post_prune_metrics =
                stage_metrics(model, catalog, test, stage, config.eval_cutoffs);

            const std::uint64_t subset_seed =
                root.derive(kTagRecovery + stage_index(stage), 0).seed();
            const std::vector<RequestRecord> subset =
                recovery_subset(train, config.recovery_fraction, subset_seed);
            rng_log.push_back(NamedRngSnapshot{std::string(stage_name(stage)) +
                                                   "/recovery-subset",
                                               subset_seed, subset.size()});
            TrainStats rs = recover_stage(model, subset, stage, config);
            report.recovery_losses = rs.epoch_losses;
            for (auto& s : rs.streams) rng_log.push_back(std::move(s));
            report.post_recovery_metrics =
                stage_metrics(model, catalog, test, stage, config.eval_cutoffs);
        } else {
            freeze_all(model);
            model.stage_committed[stage_index(stage)] = true;
            model.training_complete = true;
        }
        out.report.stages.push_back(std::move(report));

        quantize_to_storage(model);
        const bool complete = stage == Stage::Conversion;
        Checkpoint ck = make_checkpoint(config, model, rng_log,
                                        static_cast<std::uint8_t>(stage_index(stage) + 1),
                                        complete);
        if (!out_dir.empty()) save_checkpoint(ck, out_dir + "/" + boundary_filename(stage));
        if (complete)
            out.final_checkpoint = std::move(ck);
        else
            out.boundary_checkpoints.push_back(std::move(ck));
    }

    out.report.final_census = census(model);
    return out;
}

RunOutputs run_baselines(const PipelineConfig& config, std::span<const RequestRecord> train,
                         const std::string& out_dir) {
    ModelSpec spec = config.model;
    spec.structural = false; // baselines are plain dense two-tower models

    struct BaselineJob {
        std::string role;
        std::vector<PositiveExample> positives;
    };
    std::vector<BaselineJob> jobs;
    if (config.mode == PipelineMode::MixedSingle) {
        // One model over the concatenated click and conversion streams;
        // conversions appear in both views, which upweights them.
        std::vector<PositiveExample> stream = stage_view(train, Stage::Click);
        const std::vector<PositiveExample> conv = stage_view(train, Stage::Conversion);
        stream.insert(stream.end(), conv.begin(), conv.end());
        jobs.push_back(BaselineJob{"mixed", std::move(stream)});
    } else {
        jobs.push_back(BaselineJob{"click", stage_view(train, Stage::Click)});
        jobs.push_back(BaselineJob{"conversion", stage_view(train, Stage::Conversion)});
    }

    const int total_epochs = config.epochs[0] + config.epochs[1] + config.epochs[2];
    const RngStream root(config.seed);

    RunOutputs out;
    out.report.mode = config.mode;
    Checkpoint ck;
    ck.mode = config.mode;
    ck.structural = false;
    ck.stages_done = 0;
    ck.complete = true;
    ck.config_echo = config.config_echo;

    for (std::size_t j = 0; j < jobs.size(); ++j) {
        RngStream init = root.derive(kTagInit, j);
        TwoTowerModel model = build_model(spec, init);
        ck.rng.push_back(NamedRngSnapshot{jobs[j].role + "/init", init.seed(), init.position()});

        if (jobs[j].positives.empty())
            throw DataError("training: no positive examples for " + jobs[j].role);
        const Stage objective = jobs[j].role == "conversion" ? Stage::Conversion : Stage::Click;
        PhaseSpec phase{
            .name = jobs[j].role,
            .loss_stage = Stage::Exposure, // plain softmax, no margins
            .encode_prefix = Stage::Conversion,
            .score_objective = Stage::Conversion,
            .negative_stage = objective, // in-batch negatives only
            .epochs = total_epochs,
            .shuffle_rng = root.derive(kTagBaseline + j, 0),
            .negative_rng = root.derive(kTagBaseline + j, 1),
        };
        StageReport report;
        report.stage = objective;
        report.role = jobs[j].role;
        TrainStats ts = train_phase(model, jobs[j].positives, config, phase);
        report.examples = ts.examples;
        report.epoch_losses = ts.epoch_losses;
        for (auto& s : ts.streams) ck.rng.push_back(std::move(s));
        out.report.stages.push_back(std::move(report));

        freeze_all(model);
        model.stage_committed = {true, true, true};
        model.training_complete = true;
        quantize_to_storage(model);

        const StateCensus c = census(model);
        out.report.final_census.structural_zero += c.structural_zero;
        out.report.final_census.zero_locked += c.zero_locked;
        for (std::size_t s = 0; s < kStageCount; ++s) {
            out.report.final_census.trainable[s] += c.trainable[s];
            out.report.final_census.frozen[s] += c.frozen[s];
        }
        ck.models.push_back(CheckpointModel{jobs[j].role, std::move(model)});
    }

    if (!out_dir.empty()) save_checkpoint(ck, out_dir + "/checkpoint.bin");
    out.final_checkpoint = std::move(ck);
    return out;
}

} // namespace

RunOutputs run(const PipelineConfig& config, std::span<const RequestRecord> train,
               std::span<const RequestRecord> test, const std::string& out_dir) {
    config.validate();
    if (train.empty()) throw DataError("run: empty training dataset");

    if (config.mode != PipelineMode::Csmf) return run_baselines(config, train, out_dir);

    const RngStream root(config.seed);
    RngStream init = root.derive(kTagInit, 0);
    TwoTowerModel model = build_model(config.model, init);
    std::vector<NamedRngSnapshot> rng_log{
        NamedRngSnapshot{"init", init.seed(), init.position()}};
    return run_csmf(config, train, test, out_dir, std::move(model), std::move(rng_log), 0);
}

RunOutputs resume(const Checkpoint& checkpoint, const PipelineConfig& config,
                  std::span<const RequestRecord> train, std::span<const RequestRecord> test,
                  const std::string& out_dir) {
    config.validate();
    if (checkpoint.mode != PipelineMode::Csmf)
        throw LifecycleError("resume: only csmf runs have resumable stage boundaries");
    if (config.mode != checkpoint.mode)
        throw ConfigError("resume: configured mode does not match the checkpoint");
    if (checkpoint.complete) throw LifecycleError("resume: checkpoint is already complete");
    if (checkpoint.stages_done == 0 || checkpoint.stages_done >= kStageCount)
        throw ParseError("resume: checkpoint has an invalid stage progress marker");
    if (!config.config_echo.empty() && !checkpoint.config_echo.empty() &&
        config.config_echo != checkpoint.config_echo)
        throw ConfigError("resume: config does not match the one stored in the checkpoint");

    return run_csmf(config, train, test, out_dir, checkpoint.model_for("primary"),
                    checkpoint.rng, checkpoint.stages_done);
}

} // namespace csmf
