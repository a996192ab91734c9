#include "doctest.h"

#include <fstream>

#include "ivgap/decomp.hpp"
#include "ivgap/report.hpp"
#include "support.hpp"

using namespace ivgap;
using namespace testsupport;

TEST_CASE("dgp-a population decomposition") {
    ModelFrame f = population_frame("dgp_a");
    DecompositionResult r = decompose(f);
    CHECK(std::abs(r.betaOls.value - 9.0 / 5.0) < 1e-12);
    CHECK(std::abs(r.betaOlsC.value - 5.0 / 3.0) < 1e-12);
    CHECK(std::abs(r.betaOlsCL.value - 5.0 / 3.0) < 1e-12);
    CHECK(std::abs(r.betaIv.value - 5.0 / 3.0) < 1e-12);
    CHECK(std::abs(r.covariateWeightDiff + 2.0 / 15.0) < 1e-12);
    CHECK(std::abs(r.treatmentLevelWeightDiff) < 1e-12);
    CHECK(std::abs(r.marginalEffectDiff) < 1e-12);
}

TEST_CASE("dgp-b population decomposition is pure endogeneity") {
    ModelFrame f = population_frame("dgp_b");
    DecompositionResult r = decompose(f);
    CHECK(std::abs(r.betaOlsC.value - 1.5) < 1e-12);
    CHECK(std::abs(r.betaOlsCL.value - 1.5) < 1e-12);
    CHECK(std::abs(r.covariateWeightDiff) < 1e-12);
    CHECK(std::abs(r.treatmentLevelWeightDiff) < 1e-12);
    CHECK(std::abs(r.marginalEffectDiff + 0.5) < 1e-12);
}

TEST_CASE("collapses on arbitrary frames (property)") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> sizes(50, 5000);
    for (int rep = 0; rep < 100; ++rep) {
        CAPTURE(rep);
        RandomFrameSpec s;
        s.n = sizes(rng);
        s.levels = 3 + rep % 5;
        s.weights = rep % 2 == 0;
        auto data = random_dataset(rng, s);
        ModelFrame f = build_frame(data, random_config(s, "full"));
        DecompositionResult r = decompose(f);
        double scale = std::max(1.0, std::abs(r.betaIv.value) + std::abs(r.betaOls.value));
        CHECK(std::abs(r.covariateWeightDiff + r.treatmentLevelWeightDiff + r.marginalEffectDiff -
                       (r.betaIv.value - r.betaOls.value)) < 1e-12 * scale);
        CHECK(std::abs(r.totalGap - (r.betaIv.value - r.betaOls.value)) < 1e-12 * scale);
        if (rep % 4 != 0) continue;

        DecomposeOptions homo;
        homo.slopeHetero = {0};
        homo.basis = linear_basis(f, {0});
        DecompositionResult h = decompose(f, homo);
        CHECK(std::abs(h.betaOlsC.value - h.betaOls.value) < 1e-12 * scale);
        CHECK(std::abs(h.betaOlsCL.value - h.betaOlsC.value) < 1e-12 * scale);

        DecomposeOptions lin;
        lin.slopeHetero = parse_hetero("full", f.wNames);
        lin.basis = linear_basis(f, lin.slopeHetero);
        DecompositionResult l = decompose(f, lin);
        CHECK(std::abs(l.betaOlsCL.value - l.betaOlsC.value) < 1e-12 * scale);
    }
}

TEST_CASE("perfect instrument collapses IV to OLS in the decomposition") {
    std::mt19937_64 rng(5);
    RandomFrameSpec s;
    s.n = 600;
    auto data = random_dataset(rng, s);
    ModelConfig cfg = random_config(s);
    cfg.instruments = {"x"};
    ModelFrame f = build_frame(data, cfg);
    DecompositionResult r = decompose(f);
    CHECK(std::abs(r.betaIv.value - r.betaOls.value) < 1e-12);
    CHECK(std::abs(r.totalGap) < 1e-12);
}

TEST_CASE("decomposition json layout") {
    ModelFrame f = sample_frame(builtin_dgp("dgp_a"), 3000, 9);
    DecompositionResult r = decompose(f, std::nullopt, true);
    auto j = r.to_json();
    for (const char* k : {"beta_ols", "beta_ols_c", "beta_ols_cl", "beta_iv"}) CHECK(j["coefficients"].contains(k));
    for (const char* k : {"covariate_weight_diff", "treatment_level_weight_diff", "marginal_effect_diff", "total_gap"})
        CHECK(j["components"].contains(k));
    CHECK(j.contains("joint_vcov"));
    CHECK(j.contains("dwh"));
    CHECK(j["se_regime"] == "plugin");
    CHECK(r.betaOlsC.se.has_value());
    CHECK(*r.betaOlsC.se > 0);
    CHECK(r.to_json().dump() == j.dump());
}

TEST_CASE("did-rd defaults to the corrected regime") {
    ModelFrame f = sample_frame(builtin_dgp("dgp_c"), 5000, 2);
    DecompositionResult r = decompose(f);
    CHECK(r.mode == Mode::did_rd);
    CHECK(r.regime == SeRegime::corrected);
    DecompositionResult p = decompose(f, SeRegime::plugin);
    CHECK(p.regime == SeRegime::plugin);
    CHECK(p.betaIv.value == r.betaIv.value);
}

TEST_CASE("irrelevant instrument is a numerical error") {
    DiscreteDgp d = builtin_dgp("dgp_b");
    ModelFrame f = population_frame(d);
    ModelFrame g = f;
    // instrument orthogonal to everything after residualization
    g.zraw.col(0).setConstant(1.0);
    CHECK_THROWS_AS(decompose(g), NumericalError);
}

TEST_CASE("table fixture reproduces the printed differences") {
    std::ifstream in(source_path("fixtures/table1.json"));
    auto j = nlohmann::json::parse(in);
    Table1Input t;
    for (int i = 0; i < 4; ++i) {
        t.coef[static_cast<std::size_t>(i)] = j["coefficients"][i].get<double>();
        t.se[static_cast<std::size_t>(i)] = j["standard_errors"][i].get<double>();
    }
    auto rows = table1_rows(t);
    for (int i = 0; i < 4; ++i)
        CHECK(std::abs(rows[static_cast<std::size_t>(4 + i)].value - j["expected_differences"][i].get<double>()) < 5e-4);
    std::string text = render_table1(t);
    CHECK(text.find("-0.032") != std::string::npos);
    CHECK(text.find("-0.003") != std::string::npos);
    CHECK(text.find("(0.009)") != std::string::npos);
}
