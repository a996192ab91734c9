#include "doctest.h"

#include <cmath>
#include <map>

#include "ivgap/decomp.hpp"
#include "ivgap/synthlab.hpp"
#include "ivgap/weights.hpp"

using namespace ivgap;

namespace {

std::string fixture(const std::string& name) { return std::string(IVGAP_SOURCE_DIR) + "/fixtures/" + name + ".json"; }

ModelFrame population_frame(const DiscreteDgp& d, std::shared_ptr<const Dataset>& keep) {
    keep = std::make_shared<const Dataset>(population_dataset(d));
    ModelConfig cfg = d.model_config();
    cfg.weights = "weight";
    return build_frame(keep, cfg);
}

}  // namespace

TEST_CASE("builtin fixtures satisfy every applicable identity") {
    for (const auto& name : builtin_dgp_names()) {
        CAPTURE(name);
        OracleReport r = verify_identities(builtin_dgp(name));
        for (const auto& c : r.checks) {
            CAPTURE(c.id);
            CHECK(c.passed());
        }
        CHECK(r.maxResidual() < 1e-12);
    }
}

TEST_CASE("dgp-a oracle values") {
    OracleReport r = verify_identities(builtin_dgp("dgp_a"));
    // slopes by cell: d=0 b=1, d=1 b=2; Var(X|d) 1/4 and 1
    CHECK(r.betaOls == doctest::Approx(1.8).epsilon(1e-14));
    CHECK(r.betaOlsC == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
    CHECK(r.betaIv == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
    CHECK(r.properties.separable);
    CHECK(r.properties.linearZ);
}

TEST_CASE("fixture files round-trip the builtins") {
    for (const auto& name : builtin_dgp_names()) {
        CAPTURE(name);
        DiscreteDgp a = builtin_dgp(name);
        DiscreteDgp b = DiscreteDgp::load(fixture(name));
        CHECK(a.to_json() == b.to_json());
        CHECK(DiscreteDgp::from_json(a.to_json()).to_json() == a.to_json());
    }
}

TEST_CASE("dgp validation rejects malformed documents") {
    auto j = builtin_dgp("dgp_b").to_json();
    auto bad = j;
    bad["pmf"][0][0][0] = 0.5;
    CHECK_THROWS_AS(DiscreteDgp::from_json(bad), UserError);
    bad = j;
    bad["x_rule"][0][0][0] = 7.0;
    CHECK_THROWS_AS(DiscreteDgp::from_json(bad), UserError);
    bad = j;
    bad.erase("z_values");
    CHECK_THROWS_AS(DiscreteDgp::from_json(bad), UserError);
    bad = j;
    bad["u_values"][0][0] = 0.0;  // E(U|W) != 0
    CHECK_THROWS_AS(DiscreteDgp::from_json(bad), UserError);
    CHECK_THROWS_AS(resolve_dgp("no_such_dgp_file.json"), UserError);
}

TEST_CASE("random populations satisfy applicable identities in every regime") {
    for (auto regime : all_random_regimes())
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            CAPTURE(to_string(regime));
            CAPTURE(seed);
            DiscreteDgp d = random_dgp(regime, seed);
            OracleReport r = verify_identities(d);
            int applicable = 0;
            for (const auto& c : r.checks) {
                CAPTURE(c.id);
                CHECK(c.passed());
                applicable += c.applicable;
            }
            CHECK(applicable >= 3);
            if (regime == RandomRegime::sep_invalid_std) CHECK_FALSE(r.properties.exogenous);
            if (regime == RandomRegime::nonsep_valid_std) CHECK_FALSE(r.properties.separable);
            if (regime == RandomRegime::sep_did_rd) CHECK(r.properties.zFunctionOfW);
        }
}

TEST_CASE("random populations are reproducible from the seed") {
    CHECK(random_dgp(RandomRegime::sep_valid_std, 9).to_json() == random_dgp(RandomRegime::sep_valid_std, 9).to_json());
    CHECK(random_dgp(RandomRegime::sep_valid_std, 9).to_json() != random_dgp(RandomRegime::sep_valid_std, 10).to_json());
}

TEST_CASE("population-as-dataset reproduces the oracle") {
    for (const auto& name : builtin_dgp_names()) {
        CAPTURE(name);
        DiscreteDgp d = builtin_dgp(name);
        OracleReport o = verify_identities(d);
        std::shared_ptr<const Dataset> keep;
        ModelFrame f = population_frame(d, keep);
        DecompositionResult r = decompose(f);
        CHECK(std::abs(r.betaOls.value - o.betaOls) < 1e-10);
        CHECK(std::abs(r.betaIv.value - o.betaIv) < 1e-10);
        CHECK(std::abs(r.betaOlsC.value - o.betaOlsCRegression) < 1e-10);
        CHECK(std::abs(r.betaOlsCL.value - o.betaOlsCLRegression) < 1e-10);

        ResidualizedFrame rf = residualize_frame(f);
        WeightProfile p = treatment_level_weights(rf, 0.0);
        REQUIRE(p.rows.size() == o.weights.levels.size());
        for (std::size_t j = 0; j < p.rows.size(); ++j) {
            CHECK(p.rows[j].level == o.weights.levels[j].level);
            CHECK(std::abs(p.rows[j].olsWeight - o.weights.levels[j].olsRegression) < 1e-10);
            CHECK(std::abs(p.rows[j].ivWeight - o.weights.levels[j].ivRegression) < 1e-10);
        }
        for (const auto& g : d.groups) {
            GroupTable t = group_weights(rf, make_partition(*keep, g.columns), false, g.name);
            const auto& og = o.weights.groups.at(g.name);
            REQUIRE(t.rows.size() == og.size());
            std::map<std::string, GroupOracle> byLabel;
            for (const auto& x : og) byLabel[x.label] = x;
            for (const auto& row : t.rows) {
                CAPTURE(row.label);
                REQUIRE(byLabel.count(row.label) == 1);
                CHECK(std::abs(row.share - byLabel[row.label].share) < 1e-10);
                CHECK(std::abs(row.olsWeight - byLabel[row.label].olsRegression) < 1e-10);
                CHECK(std::abs(row.ivWeight - byLabel[row.label].ivRegression) < 1e-10);
            }
        }
    }
}

TEST_CASE("regression and integral forms agree where the linearity assumptions hold") {
    for (const auto& name : {"dgp_a", "dgp_b", "dgp_b_exog", "dgp_b_invalid"}) {
        CAPTURE(name);
        OracleReport o = verify_identities(builtin_dgp(name));
        CHECK(std::abs(o.betaOlsC - o.betaOlsCRegression) < 1e-12);
        CHECK(std::abs(o.betaOlsCL - o.betaOlsCLRegression) < 1e-12);
        for (const auto& l : o.weights.levels) {
            CHECK(std::abs(l.olsRegression - l.olsIntegral) < 1e-12);
            CHECK(std::abs(l.ivRegression - l.ivIntegral) < 1e-12);
        }
    }
}

TEST_CASE("did-rd fixture has negative projected IV weights") {
    OracleReport o = verify_identities(builtin_dgp("dgp_c"));
    int neg = 0;
    for (const auto& g : o.weights.groups.at("cell")) neg += g.ivRegression < 0;
    CHECK(neg >= 1);
    CHECK(o.betaOlsCLForm == "regression");
    for (const auto& l : o.weights.levels) CHECK(std::abs(l.ivRegression - l.ivIntegral) < 1e-12);
    double s = 0;
    for (const auto& g : o.weights.groups.at("cell")) s += g.ivRegression;
    CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("sampling is deterministic and matches the pmf") {
    DiscreteDgp d = builtin_dgp("dgp_a");
    Dataset a = sample(d, 2000, 42), b = sample(d, 2000, 42), c = sample(d, 2000, 43);
    CHECK(a.numeric("x") == b.numeric("x"));
    CHECK(a.numeric("x") != c.numeric("x"));
    Dataset big = sample(d, 200000, 7, true);
    double m = 0;
    for (double v : big.numeric("x")) m += v;
    m /= 200000.0;
    // E[X] = 0.25*1 + 0.25*2
    CHECK(std::abs(m - 0.75) < 0.01);
    CHECK(big.has("u"));
    CHECK_FALSE(a.has("u"));
}

TEST_CASE("split seeds give distinct streams") {
    CHECK(split_seed(1, 0) != split_seed(1, 1));
    CHECK(split_seed(1, 0) != split_seed(2, 0));
    CHECK(split_seed(5, 3) == split_seed(5, 3));
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        double u = uniform01(rng);
        CHECK((u >= 0.0 && u < 1.0));
    }
}

TEST_CASE("categorical sample columns are compacted to observed levels") {
    DiscreteDgp d = builtin_dgp("dgp_c");
    Dataset s = sample(d, 500, 3);
    CHECK(s.type("group") == ColumnType::categorical);
    CHECK(s.categorical("group").levels == std::vector<std::string>{"0", "1", "2"});
}

TEST_CASE("mc study with two reps gives a valid summary") {
    McOptions o;
    o.n = 400;
    o.reps = 2;
    o.seed = 11;
    McSummary s = mc_study(builtin_dgp("dgp_a"), o);
    CHECK(s.failures == 0);
    REQUIRE(s.targets.size() == 7);
    for (const auto& t : s.targets) CHECK(t.valid == 2);
    CHECK(s.to_csv().find("beta_ols_c,") != std::string::npos);
    o.reps = 1;
    CHECK_THROWS_AS(mc_study(builtin_dgp("dgp_a"), o), UserError);
}

TEST_CASE("mc study is independent of the thread count") {
    McOptions o;
    o.n = 300;
    o.reps = 6;
    o.seed = 5;
    o.threads = 1;
    McSummary a = mc_study(builtin_dgp("dgp_b"), o);
    o.threads = 3;
    McSummary b = mc_study(builtin_dgp("dgp_b"), o);
    CHECK(a.to_csv() == b.to_csv());
}

TEST_CASE("enumeration exposes the moment table") {
    MomentTable t = enumerate_moments(builtin_dgp("dgp_a"));
    CHECK(t.atoms.size() == 4);
    CHECK(static_cast<double>(t.expect([](const Atom& a) { return a.x; })) == doctest::Approx(0.75));
    CHECK(static_cast<double>(t.expect_in_cell(1, [](const Atom& a) { return a.y; })) == doctest::Approx(2.0));
    CHECK(t.wDesign.rows() == 2);
}
