#include "doctest.h"

#include "ivgap/weights.hpp"
#include "support.hpp"

using namespace ivgap;
using namespace testsupport;

namespace {

double sum_ols(const WeightProfile& p) {
    double s = 0;
    for (const auto& r : p.rows) s += r.olsWeight;
    return s;
}

double sum_iv(const WeightProfile& p) {
    double s = 0;
    for (const auto& r : p.rows) s += r.ivWeight;
    return s;
}

}  // namespace

TEST_CASE("dgp-a level weights") {
    ModelFrame f = population_frame("dgp_a");
    ResidualizedFrame rf = residualize_frame(f);
    WeightProfile p = treatment_level_weights(rf);
    REQUIRE(p.rows.size() == 2);
    CHECK(p.rows[0].level == 1);
    CHECK(p.rows[1].level == 2);
    CHECK(std::abs(p.rows[0].olsWeight - 3.0 / 5.0) < 1e-12);
    CHECK(std::abs(p.rows[1].olsWeight - 2.0 / 5.0) < 1e-12);
    CHECK(std::abs(p.rows[0].ivWeight - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(p.rows[1].ivWeight - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("dgp-b level weights are flat") {
    ModelFrame f = population_frame("dgp_b");
    ResidualizedFrame rf = residualize_frame(f);
    WeightProfile p = treatment_level_weights(rf);
    REQUIRE(p.rows.size() == 2);
    for (const auto& r : p.rows) {
        CHECK(std::abs(r.olsWeight - 0.5) < 1e-12);
        CHECK(std::abs(r.ivWeight - 0.5) < 1e-12);
    }
}

TEST_CASE("dgp-a group weights by d") {
    ModelFrame f = population_frame("dgp_a");
    ResidualizedFrame rf = residualize_frame(f);
    GroupTable t = group_weights(rf, make_partition(*f.data, {"d"}), true, "d");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].label == "0");
    CHECK(std::abs(t.rows[0].ivWeight - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(t.rows[1].ivWeight - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(t.rows[0].olsWeight - 1.0 / 5.0) < 1e-12);
    CHECK(std::abs(t.rows[1].olsWeight - 4.0 / 5.0) < 1e-12);
    REQUIRE(t.rows[0].subsampleOls.has_value());
    CHECK(std::abs(t.rows[0].subsampleOls->value - 1.0) < 1e-12);
    CHECK(std::abs(t.rows[1].subsampleOls->value - 2.0) < 1e-12);
    CHECK(t.negativeIv.count == 0);
}

TEST_CASE("binary treatment has one level with unit weight") {
    DiscreteDgp d = builtin_dgp("dgp_b");
    d.xRule = {{{0, 0}, {1, 1}}};
    ModelFrame f = sample_frame(d, 3000, 5);
    ResidualizedFrame rf = residualize_frame(f);
    WeightProfile p = treatment_level_weights(rf);
    REQUIRE(p.rows.size() == 1);
    CHECK(std::abs(p.rows[0].olsWeight - 1.0) < 1e-12);
    CHECK(std::abs(p.rows[0].ivWeight - 1.0) < 1e-12);
}

TEST_CASE("single group carries all the weight") {
    std::mt19937_64 rng(3);
    RandomFrameSpec s;
    auto data = random_dataset(rng, s);
    ModelFrame f = build_frame(data, random_config(s));
    ResidualizedFrame rf = residualize_frame(f);
    Partition all;
    all.labels = {"all"};
    all.codes.assign(f.n(), 0);
    GroupTable t = group_weights(rf, all, false);
    REQUIRE(t.rows.size() == 1);
    CHECK(std::abs(t.rows[0].share - 1.0) < 1e-12);
    CHECK(std::abs(t.rows[0].olsWeight - 1.0) < 1e-12);
    CHECK(std::abs(t.rows[0].ivWeight - 1.0) < 1e-12);
}

TEST_CASE("weights sum to one (property)") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> sizes(50, 3000);
    for (int rep = 0; rep < 40; ++rep) {
        CAPTURE(rep);
        RandomFrameSpec s;
        s.n = sizes(rng);
        s.levels = 2 + rep % 6;
        s.weights = rep % 3 != 0;
        auto data = random_dataset(rng, s);
        ModelFrame f = build_frame(data, random_config(s));
        ResidualizedFrame rf = residualize_frame(f);
        WeightProfile p = treatment_level_weights(rf);
        CHECK(std::abs(sum_ols(p) - 1.0) < 1e-10);
        CHECK(std::abs(sum_iv(p) - 1.0) < 1e-10);
        WeightProfile b = treatment_level_weights(rf, 0.3);
        CHECK(b.rows.size() <= p.rows.size());
        CHECK(std::abs(sum_ols(b) - 1.0) < 1e-10);
        CHECK(std::abs(sum_iv(b) - 1.0) < 1e-10);
        GroupTable t = group_weights(rf, make_partition(*f.data, {"g"}), false);
        double so = 0, si = 0, sh = 0;
        for (const auto& r : t.rows) {
            so += r.olsWeight;
            si += r.ivWeight;
            sh += r.share;
        }
        CHECK(std::abs(so - 1.0) < 1e-10);
        CHECK(std::abs(si - 1.0) < 1e-10);
        CHECK(std::abs(sh - 1.0) < 1e-10);
    }
}

TEST_CASE("instrument equal to treatment gives identical weights") {
    std::mt19937_64 rng(17);
    RandomFrameSpec s;
    s.n = 700;
    auto data = random_dataset(rng, s);
    ModelConfig cfg = random_config(s);
    cfg.instruments = {"x"};
    ModelFrame f = build_frame(data, cfg);
    ResidualizedFrame rf = residualize_frame(f);
    for (const auto& r : treatment_level_weights(rf).rows) CHECK(std::abs(r.ivWeight - r.olsWeight) < 1e-10);
    for (const auto& r : group_weights(rf, make_partition(*f.data, {"g"}), false).rows)
        CHECK(std::abs(r.ivWeight - r.olsWeight) < 1e-10);
}

TEST_CASE("binning merges adjacent levels") {
    ModelFrame f = sample_frame(builtin_dgp("dgp_a"), 4000, 8);
    ResidualizedFrame rf = residualize_frame(f);
    WeightProfile fine = treatment_level_weights(rf);
    WeightProfile coarse = treatment_level_weights(rf, 2.0);
    REQUIRE(coarse.rows.size() == 1);
    CHECK(coarse.rows[0].level == 1);
    CHECK(coarse.rows[0].levelHigh == 2);
    CHECK(std::abs(coarse.rows[0].olsWeight - 1.0) < 1e-10);
    CHECK(std::abs(coarse.rows[0].share - (fine.rows[0].share + fine.rows[1].share)) < 1e-12);
}

TEST_CASE("did-rd cell weights turn negative on dgp-c") {
    ModelFrame f = population_frame("dgp_c");
    ResidualizedFrame rf = residualize_frame(f);
    GroupTable t = group_weights(rf, make_partition(*f.data, {"group", "period"}), false, "cell");
    CHECK(t.negativeIv.count == 3);
    CHECK(std::abs(t.negativeIv.sum + 0.5333333333333333) < 1e-4);
    double si = 0;
    for (const auto& r : t.rows) si += r.ivWeight;
    CHECK(std::abs(si - 1.0) < 1e-10);
}

TEST_CASE("report output is deterministic") {
    ModelFrame f = sample_frame(builtin_dgp("dgp_a"), 2000, 4);
    ResidualizedFrame rf = residualize_frame(f);
    auto make = [&] {
        return weight_report(treatment_level_weights(rf), {group_weights(rf, make_partition(*f.data, {"d"}), true, "d")});
    };
    WeightReport a = make(), b = make();
    CHECK(a.levels_csv() == b.levels_csv());
    CHECK(a.groups_csv() == b.groups_csv());
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.levels_csv().rfind("level,level_high,share", 0) == 0);
    CHECK(a.groups_csv().find("# negative_iv_weights[d]=count:0") == 0);

    WeightReport none = weight_report(treatment_level_weights(rf), {});
    CHECK(none.groups_csv().rfind("grouping,group", 0) == 0);
    CHECK(none.to_json()["groups"].empty());
}

TEST_CASE("negative summary") {
    NegativeSummary s = negative_summary({0.5, -0.25, 1.0, -0.25});
    CHECK(s.count == 2);
    CHECK(s.sum == -0.5);
}
