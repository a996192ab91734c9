// one PASS/FAIL line per acceptance criterion; exit status 1 if any fails
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "ivgap/decomp.hpp"
#include "ivgap/report.hpp"
#include "ivgap/weights.hpp"
#include "support.hpp"

using namespace ivgap;
using namespace testsupport;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail << "failed: ";
            else detail << "; ";
            detail << what;
            pass = false;
        }
    }
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// 1: oracle identities on the fixtures and two random populations per regime
void oracle_suite(Outcome& o) {
    auto t0 = Clock::now();
    std::vector<DiscreteDgp> dgps;
    for (const auto& name : builtin_dgp_names()) dgps.push_back(DiscreteDgp::load(source_path("fixtures/" + name + ".json")));
    for (auto regime : all_random_regimes())
        for (std::uint64_t seed = 1; seed <= 2; ++seed) dgps.push_back(random_dgp(regime, seed));
    int applicable = 0;
    double worst = 0.0;
    for (const auto& d : dgps) {
        OracleReport r = verify_identities(d, 1e-12);
        for (const auto& c : r.checks) {
            if (!c.applicable) continue;
            ++applicable;
            worst = std::max(worst, c.residual);
            o.require(c.residual < 1e-12, d.name + " " + c.id + " residual " + fmt(c.residual));
        }
    }
    double t = seconds_since(t0);
    o.require(t < 5.0, "runtime " + fmt(t) + " s");
    o.detail << (o.pass ? "" : " | ") << dgps.size() << " populations, " << applicable
             << " applicable checks, max residual " << fmt(worst, 3) << ", " << fmt(t, 3) << " s";
}

// 2: estimators on the weighted enumeration grid reproduce the oracle
void population_equivalence(Outcome& o) {
    auto t0 = Clock::now();
    double worst = 0.0;
    auto close = [&](double a, double b, const std::string& what) {
        worst = std::max(worst, std::abs(a - b));
        o.require(std::abs(a - b) < 1e-10, what + " off by " + fmt(std::abs(a - b), 3));
    };
    for (const auto& name : builtin_dgp_names()) {
        DiscreteDgp d = builtin_dgp(name);
        OracleReport orc = verify_identities(d);
        auto data = std::make_shared<const Dataset>(population_dataset(d));
        ModelConfig cfg = d.model_config();
        cfg.weights = "weight";
        ModelFrame f = build_frame(data, cfg);
        DecompositionResult r = decompose(f);
        close(r.betaOls.value, orc.betaOls, name + " beta_ols");
        close(r.betaIv.value, orc.betaIv, name + " beta_iv");
        close(r.betaOlsC.value, orc.betaOlsCRegression, name + " beta_ols_c");
        close(r.betaOlsCL.value, orc.betaOlsCLRegression, name + " beta_ols_cl");
        ResidualizedFrame rf = residualize_frame(f);
        WeightProfile p = treatment_level_weights(rf);
        o.require(p.rows.size() == orc.weights.levels.size(), name + " level count");
        for (std::size_t j = 0; j < std::min(p.rows.size(), orc.weights.levels.size()); ++j) {
            close(p.rows[j].olsWeight, orc.weights.levels[j].olsRegression, name + " level ols weight");
            close(p.rows[j].ivWeight, orc.weights.levels[j].ivRegression, name + " level iv weight");
        }
        for (const auto& g : d.groups) {
            GroupTable t = group_weights(rf, make_partition(*data, g.columns), false, g.name);
            std::map<std::string, GroupOracle> byLabel;
            for (const auto& x : orc.weights.groups.at(g.name)) byLabel[x.label] = x;
            o.require(t.rows.size() == byLabel.size(), name + " group count");
            for (const auto& row : t.rows) {
                auto it = byLabel.find(row.label);
                if (it == byLabel.end()) {
                    o.require(false, name + " unknown group " + row.label);
                    continue;
                }
                close(row.olsWeight, it->second.olsRegression, name + " group ols weight");
                close(row.ivWeight, it->second.ivRegression, name + " group iv weight");
            }
        }
    }
    double t = seconds_since(t0);
    o.require(t < 5.0, "runtime " + fmt(t) + " s");
    o.detail << (o.pass ? "" : " | ") << "max deviation " << fmt(worst, 3) << ", " << fmt(t, 3) << " s";
}

// 3: exact invariants on arbitrary frames
void invariants(Outcome& o) {
    std::mt19937_64 rng(20240607);
    std::uniform_int_distribution<std::size_t> sizes(50, 5000);
    std::uniform_real_distribution<double> U(-3, 3);
    const int frames = 120;
    double worstTele = 0, worstSum = 0, worstHomo = 0, worstLin = 0, worstZx = 0, worstAff = 0;
    for (int rep = 0; rep < frames; ++rep) {
        RandomFrameSpec s;
        s.n = sizes(rng);
        s.levels = 2 + rep % 7;
        s.weights = rep % 2 == 0;
        s.clusters = rep % 3 != 0;
        auto data = random_dataset(rng, s);
        ModelConfig cfg = random_config(s, "full");
        ModelFrame f = build_frame(data, cfg);
        ResidualizedFrame rf = residualize_frame(f);
        DecompositionResult r = decompose(f);
        double scale = std::max(1.0, std::abs(r.betaIv.value) + std::abs(r.betaOls.value));
        double tele = std::abs(r.covariateWeightDiff + r.treatmentLevelWeightDiff + r.marginalEffectDiff -
                               (r.betaIv.value - r.betaOls.value)) / scale;
        worstTele = std::max(worstTele, tele);

        WeightProfile p = treatment_level_weights(rf);
        GroupTable g = group_weights(rf, make_partition(*data, {"g"}), false);
        double lo = 0, li = 0, go = 0, gi = 0;
        for (const auto& row : p.rows) {
            lo += row.olsWeight;
            li += row.ivWeight;
        }
        for (const auto& row : g.rows) {
            go += row.olsWeight;
            gi += row.ivWeight;
        }
        worstSum = std::max({worstSum, std::abs(lo - 1), std::abs(li - 1), std::abs(go - 1), std::abs(gi - 1)});

        DecomposeOptions homo;
        homo.slopeHetero = {0};
        DecompositionResult h = decompose(f, homo);
        worstHomo = std::max(worstHomo, std::abs(h.betaOlsC.value - h.betaOls.value) / scale);

        DecomposeOptions lin;
        lin.slopeHetero = parse_hetero("full", f.wNames);
        lin.basis = linear_basis(f, lin.slopeHetero);
        DecompositionResult l = decompose(f, lin);
        worstLin = std::max(worstLin, std::abs(l.betaOlsCL.value - l.betaOlsC.value) / scale);

        ModelConfig zx = cfg;
        zx.instruments = {"x"};
        ModelFrame fz = build_frame(data, zx);
        ResidualizedFrame rz = residualize_frame(fz);
        double dz = std::abs(iv_beta(rz).value - ols_beta(rz).value) / scale;
        for (const auto& row : treatment_level_weights(rz).rows) dz = std::max(dz, std::abs(row.ivWeight - row.olsWeight));
        worstZx = std::max(worstZx, dz);

        double a = U(rng), c = U(rng);
        if (std::abs(a) < 0.1) a = 1.7;
        ModelFrame fa = f;
        fa.zraw.col(0) = (a * fa.zraw.col(0).array() + c).matrix();
        fa.zraw.col(1) = (fa.zraw.col(1).array() * 0.5 - 2.0 * c).matrix();
        double b1 = iv_beta(residualize_frame(fa)).value;
        worstAff = std::max(worstAff, std::abs(b1 - r.betaIv.value) / std::max(1.0, std::abs(r.betaIv.value)));
    }
    o.require(worstTele < 1e-12, "telescoping " + fmt(worstTele, 3));
    o.require(worstSum < 1e-12, "weight sums " + fmt(worstSum, 3));
    o.require(worstHomo < 1e-12, "homogeneous-slope collapse " + fmt(worstHomo, 3));
    o.require(worstLin < 1e-12, "linear-basis collapse " + fmt(worstLin, 3));
    o.require(worstZx < 1e-12, "Z=X collapse " + fmt(worstZx, 3));
    o.require(worstAff < 1e-10, "affine invariance " + fmt(worstAff, 3));
    o.detail << (o.pass ? "" : " | ") << frames << " frames; max: telescoping " << fmt(worstTele, 2) << ", sums "
             << fmt(worstSum, 2) << ", homogeneous " << fmt(worstHomo, 2) << ", linear " << fmt(worstLin, 2) << ", Z=X "
             << fmt(worstZx, 2) << ", affine " << fmt(worstAff, 2);
}

const McTargetSummary& target(const McSummary& s, const std::string& name) {
    for (const auto& t : s.targets)
        if (t.target == name) return t;
    throw std::runtime_error("missing target " + name);
}

// 4: consistency on dgp-a
void consistency(Outcome& o) {
    auto t0 = Clock::now();
    DiscreteDgp d = builtin_dgp("dgp_a");
    McOptions small, large;
    small.n = 10000;
    large.n = 100000;
    small.reps = large.reps = 200;
    small.seed = 401;
    large.seed = 402;
    small.dwh = large.dwh = false;
    McSummary a = mc_study(d, small), b = mc_study(d, large);
    o.require(a.failures == 0 && b.failures == 0, "replication failures");
    std::ostringstream ratios;
    for (const char* name : {"beta_ols", "beta_ols_c", "beta_ols_cl", "beta_iv"}) {
        const auto& ta = target(a, name);
        const auto& tb = target(b, name);
        double za = std::abs(ta.mean - ta.oracle) / ta.mcSe, zb = std::abs(tb.mean - tb.oracle) / tb.mcSe;
        o.require(za <= 3.0, std::string(name) + " n=1e4 bias " + fmt(za) + " MC-SE");
        o.require(zb <= 3.0, std::string(name) + " n=1e5 bias " + fmt(zb) + " MC-SE");
        double ratio = ta.rmse / tb.rmse;
        o.require(ratio >= 2.5 && ratio <= 4.0, std::string(name) + " rmse ratio " + fmt(ratio));
        ratios << " " << name << "=" << fmt(ratio, 3);
    }
    double t = seconds_since(t0);
    o.require(t < 120.0, "runtime " + fmt(t) + " s");
    o.detail << (o.pass ? "" : " | ") << "rmse ratios" << ratios.str() << ", " << fmt(t, 3) << " s";
}

// 5: dwh size under exogeneity and power under endogeneity
void dwh_size_power(Outcome& o) {
    auto t0 = Clock::now();
    McOptions opt;
    opt.n = 2000;
    opt.reps = 1000;
    opt.seed = 501;
    McSummary s = mc_study(builtin_dgp("dgp_b_exog"), opt);
    o.require(s.dwhValid == 1000, "valid dwh reps " + std::to_string(s.dwhValid));
    o.require(s.dwhRejection >= 0.035 && s.dwhRejection <= 0.065, "size " + fmt(s.dwhRejection));

    auto data = std::make_shared<const Dataset>(sample(builtin_dgp("dgp_b"), 100000, 502));
    ModelFrame f = build_frame(data, builtin_dgp("dgp_b").model_config());
    DecompositionResult r = decompose(f, std::nullopt, true);
    double tstat = r.dwh ? r.dwh->statistic : 0.0;
    o.require(std::abs(tstat) > 10, "power |T| = " + fmt(std::abs(tstat)));
    double t = seconds_since(t0);
    o.require(t < 120.0, "runtime " + fmt(t) + " s");
    o.detail << (o.pass ? "" : " | ") << "size " << fmt(s.dwhRejection, 3) << " over " << s.dwhValid << " reps, |T| "
             << fmt(std::abs(tstat), 4) << ", " << fmt(t, 3) << " s";
}

// 6: plugin and corrected ses for beta_ols_cl on saturated dgp-a
void ignorability(Outcome& o) {
    auto data = std::make_shared<const Dataset>(sample(builtin_dgp("dgp_a"), 100000, 601));
    ModelFrame f = build_frame(data, builtin_dgp("dgp_a").model_config());
    DecompositionResult r = decompose(f, SeRegime::plugin);
    double p = std::sqrt(r.vcovPlugin(2, 2)), c = std::sqrt(r.vcovCorrected(2, 2));
    double rel = std::abs(p - c) / c;
    o.require(rel < 0.02, "relative difference " + fmt(rel));
    o.detail << (o.pass ? "" : " | ") << "plugin " << fmt(p, 5) << ", corrected " << fmt(c, 5) << ", relative diff "
             << fmt(rel, 3);
}

// 7: negative did-rd weights on dgp-c
void negative_weights(Outcome& o) {
    DiscreteDgp d = builtin_dgp("dgp_c");
    OracleReport orc = verify_identities(d);
    auto data = std::make_shared<const Dataset>(sample(d, 100000, 701));
    ModelFrame f = build_frame(data, d.model_config());
    ResidualizedFrame rf = residualize_frame(f);
    int oracleNegGroups = 0;
    for (const auto& g : d.groups) {
        const auto& og = orc.weights.groups.at(g.name);
        std::vector<double> ow;
        for (const auto& x : og) ow.push_back(x.ivRegression);
        NegativeSummary on = negative_summary(ow);
        oracleNegGroups += on.count;
        GroupTable t = group_weights(rf, make_partition(*data, g.columns), false, g.name);
        std::map<std::string, double> est;
        for (const auto& row : t.rows) est[row.label] = row.ivWeight;
        for (const auto& x : og) {
            if (!(x.ivRegression < 0)) continue;
            auto it = est.find(x.label);
            o.require(it != est.end() && it->second < 0, g.name + " group " + x.label + " sign");
        }
        o.require(std::abs(t.negativeIv.count - on.count) <= 1,
                  g.name + " negative count " + std::to_string(t.negativeIv.count) + " vs " + std::to_string(on.count));
        o.require(std::abs(t.negativeIv.sum - on.sum) <= 0.05,
                  g.name + " negative sum " + fmt(t.negativeIv.sum) + " vs " + fmt(on.sum));
        o.detail << g.name << ": oracle " << on.count << " / " << fmt(on.sum, 4) << ", sample " << t.negativeIv.count
                 << " / " << fmt(t.negativeIv.sum, 4) << "; ";
    }
    o.require(oracleNegGroups >= 1, "oracle has no negative group weight");
}

// 8: 1e6 x 50 decomposition in a child process
void performance(Outcome& o) {
    int fds[2];
    if (pipe(fds) != 0) {
        o.require(false, "pipe");
        return;
    }
    pid_t pid = fork();
    if (pid == 0) {
        close(fds[0]);
        double elapsed = -1.0;
        int levels = 0;
        try {
            const std::size_t n = 1000000, k = 50;
            std::mt19937_64 rng(801);
            std::normal_distribution<double> N;
            std::vector<std::string> names{"y", "x", "z"};
            std::vector<std::vector<double>> cov(k, std::vector<double>(n));
            std::vector<double> y(n), x(n), z(n);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < k; ++j) {
                    cov[j][i] = N(rng);
                    if (j < 5) s += 0.1 * cov[j][i];
                }
                z[i] = N(rng);
                double v = N(rng);
                int lv = std::clamp(static_cast<int>(std::floor(2.5 * (0.6 * z[i] + s + 0.5 * v) + 10)), 0, 19);
                x[i] = lv;
                y[i] = 0.5 * x[i] + 0.01 * x[i] * x[i] + s + 0.5 * v + N(rng);
            }
            std::vector<ColumnData> cols{NumericColumn{std::move(y)}, NumericColumn{std::move(x)}, NumericColumn{std::move(z)}};
            ModelConfig cfg;
            cfg.outcome = "y";
            cfg.treatment = "x";
            cfg.instruments = {"z"};
            for (std::size_t j = 0; j < k; ++j) {
                names.push_back("w" + std::to_string(j));
                cols.emplace_back(NumericColumn{std::move(cov[j])});
                TermSpec t;
                t.kind = TermKind::numeric;
                t.columns = {names.back()};
                cfg.covariates.push_back(t);
            }
            cfg.mode = "standard";
            auto data = std::make_shared<const Dataset>(names, std::move(cols));
            auto t0 = Clock::now();
            ModelFrame f = build_frame(data, cfg);
            DecompositionResult r = decompose(f);
            elapsed = seconds_since(t0);
            levels = static_cast<int>(treatment_support(f).size());
            if (!std::isfinite(r.totalGap) || f.mode != Mode::standard) elapsed = -2.0;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "performance child: %s\n", e.what());
        }
        double msg[2] = {elapsed, static_cast<double>(levels)};
        [[maybe_unused]] auto wr = write(fds[1], msg, sizeof msg);
        close(fds[1]);
        _exit(0);
    }
    close(fds[1]);
    double msg[2] = {-1.0, 0.0};
    [[maybe_unused]] auto rd = read(fds[0], msg, sizeof msg);
    close(fds[0]);
    int status = 0;
    struct rusage ru {};
    wait4(pid, &status, 0, &ru);
    double gb = static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0);
    o.require(msg[0] >= 0, "child did not complete");
    o.require(msg[0] < 60.0, "wall time " + fmt(msg[0]) + " s");
    o.require(gb < 4.0, "peak memory " + fmt(gb) + " GB");
    o.require(msg[1] <= 25, "support levels " + fmt(msg[1]));
    o.detail << (o.pass ? "" : " | ") << "1e6 x 50, " << static_cast<int>(msg[1]) << " levels: " << fmt(msg[0], 3)
             << " s, peak rss " << fmt(gb, 3) << " GB, " << std::thread::hardware_concurrency() << " core(s)";
}

// 9: table layout fixture
void table_fixture(Outcome& o) {
    std::ifstream in(source_path("fixtures/table1.json"));
    auto j = nlohmann::json::parse(in);
    Table1Input t;
    for (std::size_t i = 0; i < 4; ++i) {
        t.coef[i] = j["coefficients"][i].get<double>();
        t.se[i] = j["standard_errors"][i].get<double>();
    }
    auto rows = table1_rows(t);
    std::string text = render_table1(t);
    for (std::size_t i = 0; i < 3; ++i) {
        double want = j["expected_differences"][i].get<double>();
        double exact = t.coef[i + 1] - t.coef[i];
        o.require(std::abs(rows[4 + i].value - exact) < 1e-15, rows[4 + i].label + " is not the coefficient difference");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", want);
        o.require(std::abs(rows[4 + i].value - want) < 5e-4, rows[4 + i].label + " = " + fmt(rows[4 + i].value));
        o.require(text.find(buf) != std::string::npos, std::string("printed value ") + buf + " missing");
    }
    for (const char* label : {"(2)-(1)", "(3)-(2)", "(4)-(3)"})
        o.require(text.find(label) != std::string::npos, std::string("row ") + label + " missing");
    o.detail << (o.pass ? "" : " | ") << "differences " << fmt(rows[4].value, 3) << ", " << fmt(rows[5].value, 3) << ", "
             << fmt(rows[6].value, 3) << ", total " << fmt(rows[7].value, 3);
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
        {"oracle identity suite", oracle_suite},
        {"population-as-dataset equivalence", population_equivalence},
        {"algebraic invariants on random frames", invariants},
        {"consistency on dgp-a", consistency},
        {"dwh size and power", dwh_size_power},
        {"plugin vs corrected se", ignorability},
        {"negative weights on dgp-c", negative_weights},
        {"performance 1e6 x 50", performance},
        {"table layout fixture", table_fixture},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        std::cout << "criterion " << i + 1 << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << "  "
                  << o.detail.str() << std::endl;
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
