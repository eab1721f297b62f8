#include <doctest.h>

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "csmf/errors.hpp"
#include "csmf/rng.hpp"
#include "csmf/towers.hpp"
#include "support/oracles.hpp"

using csmf::BlockLayout;
using csmf::EntityFeatures;
using csmf::ModelSpec;
using csmf::ParamKind;
using csmf::RngStream;
using csmf::ServingWeights;
using csmf::Side;
using csmf::Stage;
using csmf::TwoTowerModel;

namespace {

ModelSpec small_spec(bool structural = true) {
    ModelSpec spec;
    spec.user.categoricals = {{"user_id", 5, 4, BlockLayout(2, 1, 1)}};
    spec.user.dense_count = 2;
    spec.item.categoricals = {{"item_id", 4, 4, BlockLayout(2, 1, 1)}};
    spec.item.dense_count = 1;
    spec.hidden_widths = {6};
    spec.hidden_layouts = {BlockLayout(3, 2, 1)};
    spec.final_layout = BlockLayout(2, 1, 1);
    spec.init_scale = 0.05;
    spec.structural = structural;
    return spec;
}

EntityFeatures user_features() {
    EntityFeatures f;
    f.dense = {0.5, -0.3};
    f.cats = {{2}};
    return f;
}

EntityFeatures item_features() {
    EntityFeatures f;
    f.dense = {0.8};
    f.cats = {{1}};
    return f;
}

// user: 5x4 emb + (6 in -> 6) 36+6 + (6 -> 4) 24+4 = 90
// item: 4x4 emb + (5 in -> 6) 30+6 + (6 -> 4) 24+4 = 80
constexpr std::size_t kSpecParamCount = 90 + 80;

} // namespace

TEST_CASE("a fresh model is fully trainable at the first stage") {
    RngStream rng(21);
    const TwoTowerModel model = csmf::build_model(small_spec(), rng);
    const csmf::StateCensus c = csmf::census(model);
    CHECK(c.total() == kSpecParamCount);
    CHECK(c.structural_zero > 0);
    CHECK(c.zero_locked == 0);
    CHECK(c.trainable[0] + c.structural_zero == kSpecParamCount);
    CHECK(c.trainable[1] == 0);
    CHECK(c.trainable[2] == 0);
    for (std::size_t s = 0; s < csmf::kStageCount; ++s) CHECK(c.frozen[s] == 0);

    std::size_t visited = 0;
    csmf::visit_params(model, [&](double, const csmf::ParamState&) { ++visited; });
    CHECK(visited == kSpecParamCount);

    RngStream rng_off(21);
    const TwoTowerModel dense = csmf::build_model(small_spec(false), rng_off);
    const csmf::StateCensus cd = csmf::census(dense);
    CHECK(cd.structural_zero == 0);
    CHECK(cd.trainable[0] == kSpecParamCount);
}

TEST_CASE("model spec validation rejects inconsistent shapes") {
    ModelSpec spec = small_spec();
    spec.hidden_layouts = {BlockLayout(3, 2, 2)};
    CHECK_THROWS_AS(spec.validate(), csmf::ConfigError);

    spec = small_spec();
    spec.user.categoricals[0].layout = BlockLayout(2, 2, 1);
    CHECK_THROWS_AS(spec.validate(), csmf::ConfigError);

    spec = small_spec();
    spec.init_scale = 0.0;
    CHECK_THROWS_AS(spec.validate(), csmf::ConfigError);

    spec = small_spec();
    spec.user.categoricals.clear();
    spec.user.dense_count = 0;
    CHECK_THROWS_AS(spec.validate(), csmf::ConfigError);
}

TEST_CASE("encode masks coordinates beyond the active prefix and is deterministic") {
    RngStream rng(22);
    const TwoTowerModel model = csmf::build_model(small_spec(), rng);
    const EntityFeatures f = user_features();

    const std::vector<double> d = csmf::encode(model, Side::User, f, Stage::Exposure);
    REQUIRE(d.size() == 4);
    CHECK(d[2] == 0.0);
    CHECK(d[3] == 0.0);

    const std::vector<double> o = csmf::encode(model, Side::User, f, Stage::Click);
    CHECK(o[3] == 0.0);
    CHECK(o[0] == d[0]);
    CHECK(o[1] == d[1]);

    const std::vector<double> r = csmf::encode(model, Side::User, f, Stage::Conversion);
    CHECK(r[0] == d[0]);
    CHECK(r[1] == d[1]);
    CHECK(r[2] == o[2]);
    CHECK(r == csmf::encode(model, Side::User, f, Stage::Conversion));
}

TEST_CASE("score accumulates segment dot products cumulatively") {
    const BlockLayout layout(1, 1, 1);
    const std::vector<double> u{1.0, 1.0, 1.0};
    const std::vector<double> v{1.0, 2.0, 3.0};
    CHECK(csmf::score(u, v, Stage::Exposure, layout) == doctest::Approx(1.0));
    CHECK(csmf::score(u, v, Stage::Click, layout) == doctest::Approx(3.0));
    CHECK(csmf::score(u, v, Stage::Conversion, layout) == doctest::Approx(6.0));
    CHECK_THROWS_AS(csmf::score(u, std::vector<double>{1.0, 2.0}, Stage::Exposure, layout),
                    csmf::ShapeError);
}

TEST_CASE("segment scales turn one dot product into the weighted stage mix") {
    const ServingWeights w{1.0, 1.8, 1.2};
    const std::array<double, 3> scales = w.segment_scales();
    CHECK(scales[0] == doctest::Approx(4.0));
    CHECK(scales[1] == doctest::Approx(3.0));
    CHECK(scales[2] == doctest::Approx(1.2));

    // Hand vectors with segment dots (1, 2, 3): fused must be 4 + 6 + 3.6.
    const std::vector<double> u{1.0, 1.0, 1.0};
    const std::vector<double> v{1.0, 2.0, 3.0};
    double fused = 0.0;
    for (std::size_t i = 0; i < 3; ++i) fused += scales[i] * u[i] * v[i];
    CHECK(fused == doctest::Approx(13.6).epsilon(1e-12));
}

TEST_CASE("fused retrieval score equals the weighted sum of stage scores") {
    RngStream rng(23);
    const TwoTowerModel model = csmf::build_model(small_spec(), rng);
    const EntityFeatures uf = user_features();
    const EntityFeatures vf = item_features();

    const std::array<double, 3> s = csmf::stage_scores(model, uf, vf);
    for (Stage stage : csmf::kStages) {
        const std::vector<double> u = csmf::encode(model, Side::User, uf, stage);
        const std::vector<double> v = csmf::encode(model, Side::Item, vf, stage);
        CHECK(s[csmf::stage_index(stage)] ==
              doctest::Approx(csmf::score(u, v, stage, model.final_layout)));
    }

    const ServingWeights w{1.0, 1.8, 1.2};
    const std::vector<double> wu = csmf::weighted_user_vector(model, uf, w);
    const std::vector<double> v = csmf::encode(model, Side::Item, vf, Stage::Conversion);
    const double fused = csmf::score(wu, v, Stage::Conversion, model.final_layout);
    const double want = w.exposure * s[0] + w.click * s[1] + w.conversion * s[2];
    CHECK(oracles::rel_err(fused, want) < 1e-12);

    const ServingWeights exposure_only{1.0, 0.0, 0.0};
    const std::vector<double> wu_d = csmf::weighted_user_vector(model, uf, exposure_only);
    const double fused_d = csmf::score(wu_d, v, Stage::Conversion, model.final_layout);
    CHECK(fused_d == doctest::Approx(s[0]).epsilon(1e-12));
}

TEST_CASE("serving weights validation") {
    const ServingWeights exposure_only{1.0, 0.0, 0.0};
    CHECK_NOTHROW(exposure_only.validate());
    const ServingWeights all_zero{0.0, 0.0, 0.0};
    CHECK_THROWS_AS(all_zero.validate(), csmf::ConfigError);
    const ServingWeights negative{-1.0, 1.0, 1.0};
    CHECK_THROWS_AS(negative.validate(), csmf::ConfigError);
}

TEST_CASE("multi-valued categoricals sum-pool their embedding rows") {
    RngStream rng(24);
    const TwoTowerModel model = csmf::build_model(small_spec(), rng);
    EntityFeatures f = user_features();
    f.cats = {{1, 3}};

    csmf::TowerTrace trace;
    csmf::encode_batch(model.user, {csmf::EntityRef(f)}, Stage::Conversion, model.structural,
                       &trace);
    const csmf::EmbeddingTable& emb = model.user.embeddings[0];
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(trace.input(0, c) == doctest::Approx(emb.table(1, c) + emb.table(3, c)));
    }
    CHECK(trace.input(0, 4) == 0.5);
    CHECK(trace.input(0, 5) == -0.3);
    REQUIRE(trace.activations.size() == model.user.layers.size());
}

TEST_CASE("ingestion rejects out-of-vocabulary ids and shape mismatches") {
    RngStream rng(25);
    const TwoTowerModel model = csmf::build_model(small_spec(), rng);
    EntityFeatures f = user_features();
    f.cats = {{7}};
    CHECK_THROWS_AS(csmf::encode(model, Side::User, f, Stage::Exposure), csmf::DataError);
    f.cats = {{-1}};
    CHECK_THROWS_AS(csmf::encode(model, Side::User, f, Stage::Exposure), csmf::DataError);
    f = user_features();
    f.dense = {0.5};
    CHECK_THROWS_AS(csmf::encode(model, Side::User, f, Stage::Exposure), csmf::DataError);
    f = user_features();
    f.cats = {};
    CHECK_THROWS_AS(csmf::encode(model, Side::User, f, Stage::Exposure), csmf::DataError);
}

TEST_CASE("serving export requires a finished model and applies scales to users only") {
    RngStream rng(26);
    TwoTowerModel model = csmf::build_model(small_spec(), rng);
    const EntityFeatures uf = user_features();
    const EntityFeatures vf = item_features();
    const std::vector<csmf::KeyedEntity> users{{11, csmf::EntityRef(uf)}};
    const std::vector<csmf::KeyedEntity> items{{42, csmf::EntityRef(vf)}};
    const ServingWeights w{1.0, 1.8, 1.2};

    CHECK_THROWS_AS(csmf::export_serving_vectors(model, users, items, w), csmf::LifecycleError);

    model.training_complete = true;
    CHECK_THROWS_AS(csmf::export_serving_vectors(model, users, items, ServingWeights{0, 0, 0}),
                    csmf::ConfigError);

    const csmf::ServingExport out = csmf::export_serving_vectors(model, users, items, w);
    REQUIRE(out.users.ids == std::vector<std::int64_t>{11});
    REQUIRE(out.items.ids == std::vector<std::int64_t>{42});

    const std::vector<double> wu = csmf::weighted_user_vector(model, uf, w);
    const std::vector<double> v = csmf::encode(model, Side::Item, vf, Stage::Conversion);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out.users.vectors(0, i) == doctest::Approx(wu[i]).epsilon(1e-12));
        CHECK(out.items.vectors(0, i) == v[i]);
    }
}

TEST_CASE("value digest reacts to any parameter change") {
    RngStream rng(27);
    TwoTowerModel model = csmf::build_model(small_spec(), rng);
    const std::uint64_t before = csmf::value_digest(model);

    RngStream rng2(27);
    const TwoTowerModel clone = csmf::build_model(small_spec(), rng2);
    CHECK(csmf::value_digest(clone) == before);

    model.item.embeddings[0].table(2, 1) += 1e-9;
    CHECK(csmf::value_digest(model) != before);
}

TEST_CASE("vector files round-trip through 32-bit storage") {
    csmf::VectorSet set;
    set.ids = {3, 1};
    set.vectors = csmf::Matrix(2, 4);
    const double vals[8] = {0.25, -1.5, 3.75, 0.0, 1e-3, -2.25, 0.5, 9.0};
    std::copy(vals, vals + 8, set.vectors.values.begin());
    const BlockLayout layout(2, 1, 1);

    const std::string path = "towers_vectors_test.bin";
    csmf::write_vector_file(path, set, layout);
    const csmf::VectorFile back = csmf::read_vector_file(path);
    CHECK(back.layout == layout);
    CHECK(back.set.ids == set.ids);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(back.set.vectors(r, c) == static_cast<double>(static_cast<float>(set.vectors(r, c))));
    std::remove(path.c_str());

    CHECK_THROWS_AS(csmf::read_vector_file("no_such_vectors.bin"), csmf::IoError);
}
