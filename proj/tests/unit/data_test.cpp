#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "csmf/data.hpp"
#include "csmf/errors.hpp"
#include "support/oracles.hpp"

using csmf::GeneratedData;
using csmf::GeneratorConfig;
using csmf::ItemEvent;
using csmf::RequestRecord;
using csmf::Stage;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.users = 300;
    cfg.items = 150;
    cfg.requests_per_user = 3;
    cfg.exposed_per_request = 5;
    cfg.unexposed_per_request = 3;
    cfg.latent_dim = 8;
    cfg.seed = 7;
    return cfg;
}

RequestRecord valid_record() {
    RequestRecord r;
    r.request_id = 1;
    r.user_id = 10;
    r.ts = 0;
    r.user_dense = {0.1};
    r.user_cats = {{10}};
    ItemEvent a;
    a.id = 100;
    a.dense = {1.0};
    a.cats = {{100}};
    a.clicked = true;
    a.converted = true;
    ItemEvent b;
    b.id = 101;
    b.dense = {2.0};
    b.cats = {{101}};
    r.exposed = {a, b};
    ItemEvent u;
    u.id = 102;
    u.dense = {3.0};
    u.cats = {{102}};
    r.unexposed = {u};
    return r;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("record validation names the violated rule") {
    CHECK_NOTHROW(valid_record().validate());

    RequestRecord r = valid_record();
    r.exposed[1].converted = true; // not clicked
    CHECK_THROWS_WITH_AS(r.validate(),
                         doctest::Contains("converted-but-not-clicked"), csmf::DataError);

    r = valid_record();
    r.unexposed[0].clicked = true;
    CHECK_THROWS_WITH_AS(r.validate(), doctest::Contains("label-on-unexposed-item"),
                         csmf::DataError);

    r = valid_record();
    r.exposed[1].id = 100;
    CHECK_THROWS_WITH_AS(r.validate(), doctest::Contains("duplicate-exposed-item"),
                         csmf::DataError);

    r = valid_record();
    r.unexposed[0].id = 100;
    CHECK_THROWS_WITH_AS(r.validate(), doctest::Contains("exposed-unexposed-overlap"),
                         csmf::DataError);
}

TEST_CASE("generated data respects the cascade by construction") {
    const GeneratedData data = csmf::generate(small_config());
    REQUIRE_FALSE(data.train.empty());
    REQUIRE_FALSE(data.test.empty());

    std::size_t exposures = 0, clicks = 0, conversions = 0;
    for (const auto* split : {&data.train, &data.test}) {
        for (const RequestRecord& r : *split) {
            CHECK_NOTHROW(r.validate());
            CHECK(r.exposed.size() == 5);
            CHECK(r.unexposed.size() == 3);
            CHECK(r.user_dense.size() == csmf::kGeneratedDenseCount);
            for (const ItemEvent& e : r.exposed) {
                ++exposures;
                clicks += e.clicked;
                conversions += e.converted;
                CHECK(e.dense.size() == csmf::kGeneratedDenseCount);
                if (e.converted) CHECK(e.clicked);
            }
            for (const ItemEvent& e : r.unexposed) {
                CHECK_FALSE(e.clicked);
                CHECK_FALSE(e.converted);
            }
        }
    }
    CHECK(exposures > clicks);
    CHECK(clicks > conversions);
    CHECK(conversions > 0);

    // Time split: strict cut at the configured tick.
    for (const RequestRecord& r : data.train) CHECK(r.ts < 2);
    for (const RequestRecord& r : data.test) CHECK(r.ts >= 2);
    CHECK(data.train.size() == 600);
    CHECK(data.test.size() == 300);
}

TEST_CASE("realized event rates track the configured ones") {
    GeneratorConfig cfg = small_config();
    cfg.users = 1000;
    cfg.items = 400;
    cfg.click_rate = 0.3;
    cfg.conversion_rate = 0.03;
    const GeneratedData data = csmf::generate(cfg);

    std::vector<RequestRecord> all = data.train;
    all.insert(all.end(), data.test.begin(), data.test.end());
    const csmf::DatasetSummary s = csmf::summarize(all);
    REQUIRE(s.exposures == 15000);
    const double click_rate = static_cast<double>(s.clicks) / static_cast<double>(s.exposures);
    const double conv_rate =
        static_cast<double>(s.conversions) / static_cast<double>(s.exposures);
    CHECK(click_rate > 0.24);
    CHECK(click_rate < 0.36);
    CHECK(conv_rate > 0.024);
    CHECK(conv_rate < 0.036);
}

TEST_CASE("rho interpolates conversion affinity between aligned and independent") {
    GeneratorConfig aligned = small_config();
    aligned.rho_conflict = 0.0;
    GeneratorConfig conflicted = small_config();
    conflicted.rho_conflict = 1.0;

    const auto rank_corr = [](const csmf::GeneratorInternals& in) {
        std::vector<double> click_dots, conv_dots;
        for (std::size_t u = 0; u < 100; ++u) {
            for (std::size_t i = 0; i < 20; ++i) {
                double c = 0.0, r = 0.0;
                for (std::size_t k = 0; k < in.user_click.cols; ++k) {
                    c += in.user_click(u, k) * in.item_click(i, k);
                    r += in.user_conversion(u, k) * in.item_conversion(i, k);
                }
                click_dots.push_back(c);
                conv_dots.push_back(r);
            }
        }
        return oracles::spearman(click_dots, conv_dots);
    };

    CHECK(rank_corr(csmf::generate(aligned).internals) > 0.99);
    CHECK(std::abs(rank_corr(csmf::generate(conflicted).internals)) < 0.1);
}

TEST_CASE("generation is deterministic in the seed") {
    const GeneratedData a = csmf::generate(small_config());
    const GeneratedData b = csmf::generate(small_config());
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);

    GeneratorConfig other = small_config();
    other.seed = 8;
    const GeneratedData c = csmf::generate(other);
    CHECK(a.train != c.train);
}

TEST_CASE("generator config validation") {
    GeneratorConfig cfg = small_config();
    cfg.split_tick = 4; // > requests_per_user
    CHECK_THROWS_AS(cfg.validate(), csmf::ConfigError);
    cfg = small_config();
    cfg.rho_conflict = 1.5;
    CHECK_THROWS_AS(cfg.validate(), csmf::ConfigError);
    cfg = small_config();
    cfg.click_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), csmf::ConfigError);
    cfg = small_config();
    cfg.conversion_rate = 0.5; // above the click rate
    CHECK_THROWS_AS(cfg.validate(), csmf::ConfigError);
    cfg = small_config();
    cfg.users = 0;
    CHECK_THROWS_AS(cfg.validate(), csmf::ConfigError);
}

TEST_CASE("records round-trip through the line-JSON file format") {
    GeneratorConfig cfg = small_config();
    cfg.users = 20;
    cfg.items = 30;
    const GeneratedData data = csmf::generate(cfg);

    const TempFile tmp("data_roundtrip_test.jsonl");
    csmf::write_records(tmp.path, data.train);
    const std::vector<RequestRecord> back = csmf::load_records(tmp.path);
    CHECK(back == data.train);

    // Byte-stable serialization: writing the same records twice is identical.
    const TempFile tmp2("data_roundtrip_test2.jsonl");
    csmf::write_records(tmp2.path, data.train);
    std::ifstream f1(tmp.path, std::ios::binary), f2(tmp2.path, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    CHECK_FALSE(b1.empty());
}

TEST_CASE("loading rejects malformed input with its line number") {
    const TempFile tmp("data_malformed_test.jsonl");
    {
        csmf::write_records(tmp.path, std::vector<RequestRecord>{valid_record()});
        std::ofstream out(tmp.path, std::ios::app);
        out << "{not json\n";
    }
    CHECK_THROWS_WITH_AS(csmf::load_records(tmp.path), doctest::Contains(":2:"),
                         csmf::ParseError);

    {
        std::ofstream out(tmp.path);
        out << R"({"request_id":1,"user_id":2,"ts":0,"user_dense":[],"user_cats":[],)"
            << R"("exposed":[],"unexposed":[],"extra":1})" << "\n";
    }
    CHECK_THROWS_WITH_AS(csmf::load_records(tmp.path), doctest::Contains("unknown key"),
                         csmf::ParseError);

    // Structurally valid JSON that breaks a data rule reports the line too.
    {
        RequestRecord bad = valid_record();
        bad.exposed[1].converted = true;
        std::vector<RequestRecord> records{valid_record()};
        csmf::write_records(tmp.path, records);
        records[0] = bad;
        const TempFile tmp_bad("data_badrule_test.jsonl");
        csmf::write_records(tmp_bad.path, records);
        CHECK_THROWS_WITH_AS(csmf::load_records(tmp_bad.path),
                             doctest::Contains("converted-but-not-clicked"), csmf::DataError);
    }
}

TEST_CASE("an empty file is an empty dataset and a missing file is an io error") {
    const TempFile tmp("data_empty_test.jsonl");
    { std::ofstream out(tmp.path); }
    CHECK(csmf::load_records(tmp.path).empty());
    CHECK_THROWS_AS(csmf::load_records("no_such_data_file.jsonl"), csmf::IoError);
}

TEST_CASE("stage views select the right positives") {
    GeneratorConfig cfg = small_config();
    cfg.users = 50;
    const GeneratedData data = csmf::generate(cfg);
    const csmf::DatasetSummary s = csmf::summarize(data.train);

    const auto exposure = csmf::stage_view(data.train, Stage::Exposure);
    const auto click = csmf::stage_view(data.train, Stage::Click);
    const auto conversion = csmf::stage_view(data.train, Stage::Conversion);
    CHECK(exposure.size() == s.exposures);
    CHECK(click.size() == s.clicks);
    CHECK(conversion.size() == s.conversions);
    CHECK(exposure.size() > click.size());
    CHECK(click.size() > conversion.size());

    for (const auto& p : click)
        CHECK(p.request->exposed[p.exposed_index].clicked);
    for (const auto& p : conversion)
        CHECK(p.request->exposed[p.exposed_index].converted);
}

TEST_CASE("recovery subsets sample requests without replacement in order") {
    GeneratorConfig cfg = small_config();
    cfg.users = 100;
    const GeneratedData data = csmf::generate(cfg);
    const auto& records = data.train;
    REQUIRE(records.size() == 200);

    const auto all = csmf::recovery_subset(records, 1.0, 5);
    CHECK(all.size() == records.size());

    const auto tenth = csmf::recovery_subset(records, 0.1, 5);
    CHECK(tenth.size() == 20);
    const auto replay = csmf::recovery_subset(records, 0.1, 5);
    CHECK(tenth == replay);
    CHECK(csmf::recovery_subset(records, 0.1, 6) != tenth);

    // The sample is a subsequence of the originals: distinct, in order.
    std::set<std::int64_t> seen;
    std::size_t pos = 0;
    for (const RequestRecord& r : tenth) {
        CHECK(seen.insert(r.request_id).second);
        bool found = false;
        while (pos < records.size()) {
            if (records[pos].request_id == r.request_id) {
                found = true;
                ++pos;
                break;
            }
            ++pos;
        }
        CHECK(found);
    }

    // Tiny fractions still keep at least one request.
    CHECK_FALSE(csmf::recovery_subset(records, 1e-6, 5).empty());
    CHECK_THROWS_AS(csmf::recovery_subset(records, 0.0, 5), csmf::ConfigError);
    CHECK_THROWS_AS(csmf::recovery_subset(records, 1.5, 5), csmf::ConfigError);
}
