#include "ivgap/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ivgap/decomp.hpp"
#include "ivgap/estimators.hpp"
#include "ivgap/projection.hpp"
#include "ivgap/report.hpp"
#include "ivgap/synthlab.hpp"
#include "ivgap/weights.hpp"

namespace ivgap::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
    std::string data;
    std::string model;
    std::string out = ".";
    std::optional<std::string> mode;
    std::optional<std::string> se;
    std::optional<std::string> cluster;
    std::optional<std::string> weights;
    double bin = 0.0;
    int threads = 1;
    std::uint64_t seed = 1;
    std::string format = "both";
    std::string dgp;
    std::size_t n = 1000;
    int reps = 100;
    bool dwh = false;
    bool noSubsample = false;
    double tol = 1e-12;
    std::string exportDgp;
    std::string randomRegime;
    bool withU = false;
};

class Emitter {
public:
    Emitter(const RunConfig& rc, std::ostream& log) : rc_(rc), log_(log) {
        if (rc.format != "json" && rc.format != "csv" && rc.format != "both")
            throw UserError("--format must be json, csv or both");
        std::error_code ec;
        fs::create_directories(rc.out, ec);
        if (ec || !fs::is_directory(rc.out)) throw UserError("cannot create output directory '" + rc.out + "'");
    }
    bool json_on() const { return rc_.format != "csv"; }
    bool csv_on() const { return rc_.format != "json"; }

    void write(const std::string& name, const std::string& text) const {
        fs::path p = fs::path(rc_.out) / name;
        std::ofstream o(p, std::ios::binary);
        if (!o) throw UserError("cannot write '" + p.string() + "'");
        o << text;
        if (!o) throw UserError("write failed for '" + p.string() + "'");
        log_ << "[ivgap] wrote " << p.string() << '\n';
    }
    void json_file(const std::string& name, json body, const Metadata& md) const {
        body["metadata"] = md.to_json();
        write(name, body.dump(2) + "\n");
    }
    void csv_file(const std::string& name, const std::string& body, const Metadata& md) const {
        write(name, md.csv_header() + body);
    }

private:
    const RunConfig& rc_;
    std::ostream& log_;
};

Metadata base_metadata(const RunConfig& rc, const std::string& cmd) {
    Metadata md;
    md.set("command", cmd);
    md.set("threads", rc.threads);
    return md;
}

ModelFrame load_frame(const RunConfig& rc, std::ostream& log) {
    if (rc.data.empty()) throw UserError("--data is required");
    if (rc.model.empty()) throw UserError("--model is required");
    log << "[ivgap] reading model " << rc.model << '\n';
    ModelConfig cfg = ModelConfig::load(rc.model);
    if (rc.mode) cfg.mode = *rc.mode;
    if (rc.weights) cfg.weights = *rc.weights;
    if (rc.cluster) cfg.cluster = *rc.cluster;
    log << "[ivgap] reading data " << rc.data << '\n';
    auto data = std::make_shared<const Dataset>(load_csv(rc.data, cfg.schema()));
    log << "[ivgap] building frame (" << data->n() << " rows)\n";
    return build_frame(data, cfg);
}

void frame_metadata(Metadata& md, const ModelFrame& f, const RunConfig& rc) {
    md.set("mode", to_string(f.mode));
    md.set("mode_check", f.modeCheck);
    md.set("n", f.n());
    md.set("dropped_rows", f.droppedRows);
    md.set("clusters", f.clusters.count);
    md.set("data", rc.data);
    md.set("model", rc.model);
    if (!f.warnings.empty()) md.set("frame_warnings", f.warnings);
}

std::string decomposition_csv(const DecompositionResult& r) {
    std::string out = "quantity,estimate,se\n";
    auto row = [&](const std::string& k, double v, std::optional<double> se) {
        out += k + "," + format_csv_number(v) + "," + (se ? format_csv_number(*se) : "NA") + "\n";
    };
    row("beta_ols", r.betaOls.value, r.betaOls.se);
    row("beta_ols_c", r.betaOlsC.value, r.betaOlsC.se);
    row("beta_ols_cl", r.betaOlsCL.value, r.betaOlsCL.se);
    row("beta_iv", r.betaIv.value, r.betaIv.se);
    row("covariate_weight_diff", r.covariateWeightDiff, r.componentSes.covariate);
    row("treatment_level_weight_diff", r.treatmentLevelWeightDiff, r.componentSes.treatmentLevel);
    row("marginal_effect_diff", r.marginalEffectDiff, r.componentSes.marginalEffect);
    row("total_gap", r.totalGap, r.componentSes.total);
    return out;
}

Table1Input table_input(const DecompositionResult& r) {
    Table1Input t;
    auto b = r.betas();
    for (int k = 0; k < 4; ++k) {
        t.coef[static_cast<std::size_t>(k)] = b(k);
        t.se[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, r.jointVcov(k, k)));
    }
    t.diffSe = {r.componentSes.covariate, r.componentSes.treatmentLevel, r.componentSes.marginalEffect,
                r.componentSes.total};
    t.showDiffSe = true;
    return t;
}

int cmd_decompose(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    Emitter em(rc, log);
    ModelFrame f = load_frame(rc, log);
    std::optional<SeRegime> regime;
    if (rc.se) regime = parse_se_regime(*rc.se);
    log << "[ivgap] decomposing\n";
    DecompositionResult r = decompose(f, regime, rc.dwh);
    Metadata md = base_metadata(rc, "decompose");
    frame_metadata(md, f, rc);
    md.set("se_regime", to_string(r.regime));
    if (em.json_on()) em.json_file("decomposition.json", r.to_json(), md);
    if (em.csv_on()) em.csv_file("decomposition.csv", decomposition_csv(r), md);
    if (rc.dwh && r.dwh) {
        if (em.json_on()) em.json_file("dwh.json", r.dwh->to_json(), md);
    }
    out << render_table1(table_input(r));
    return ok;
}

int cmd_weights(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    Emitter em(rc, log);
    if (rc.bin < 0 || rc.bin >= 1) throw UserError("--bin must be in [0, 1)");
    ModelFrame f = load_frame(rc, log);
    log << "[ivgap] computing weight profiles\n";
    ResidualizedFrame rf = residualize_frame(f);
    WeightProfile prof = treatment_level_weights(rf, rc.bin);
    std::vector<GroupTable> tables;
    for (const auto& g : f.config.groups) {
        Partition p = make_partition(*f.data, g.columns);
        tables.push_back(group_weights(rf, p, !rc.noSubsample, g.name));
    }
    WeightReport rep = weight_report(prof, tables);
    Metadata md = base_metadata(rc, "weights");
    frame_metadata(md, f, rc);
    md.set("bin_floor", rc.bin);
    if (em.json_on()) em.json_file("weights.json", rep.to_json(), md);
    if (em.csv_on()) {
        em.csv_file("weights_levels.csv", rep.levels_csv(), md);
        em.csv_file("weights_groups.csv", rep.groups_csv(), md);
    }
    out << "levels: " << prof.rows.size() << ", groupings: " << tables.size() << '\n';
    for (const auto& t : tables)
        out << "negative iv weights [" << t.name << "]: count " << t.negativeIv.count << ", sum "
            << format_number(t.negativeIv.sum) << '\n';
    return ok;
}

int cmd_dwh(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    Emitter em(rc, log);
    ModelFrame f = load_frame(rc, log);
    std::optional<SeRegime> regime;
    if (rc.se) regime = parse_se_regime(*rc.se);
    log << "[ivgap] running endogeneity test\n";
    DecompositionResult r = decompose(f, regime, true);
    Metadata md = base_metadata(rc, "dwh-test");
    frame_metadata(md, f, rc);
    md.set("se_regime", to_string(r.dwh->regime));
    json body = r.dwh->to_json();
    if (em.json_on()) em.json_file("dwh.json", body, md);
    if (em.csv_on()) {
        std::string csv = "statistic,p_value,diff,se_diff,degenerate\n";
        csv += format_csv_number(r.dwh->statistic) + "," + format_csv_number(r.dwh->pValue) + "," +
               format_csv_number(r.dwh->diff) + "," + format_csv_number(r.dwh->seDiff) + "," +
               (r.dwh->degenerate ? "true" : "false") + "\n";
        em.csv_file("dwh.csv", csv, md);
    }
    out << "T = " << format_number(r.dwh->statistic) << ", p = " << format_number(r.dwh->pValue) << '\n';
    return ok;
}

int cmd_first_stage(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    Emitter em(rc, log);
    ModelFrame f = load_frame(rc, log);
    FirstStageSummary s = first_stage_summary(f);
    Metadata md = base_metadata(rc, "first-stage");
    frame_metadata(md, f, rc);
    if (em.json_on()) em.json_file("first_stage.json", s.to_json(), md);
    if (em.csv_on()) {
        std::string csv = "instrument,coef,se,t\n";
        for (const auto& r : s.instruments)
            csv += r.name + "," + format_csv_number(r.coef) + "," + format_csv_number(r.se) + "," + format_csv_number(r.t) + "\n";
        csv += "# robust_f=" + format_csv_number(s.robustF) + "\n";
        em.csv_file("first_stage.csv", csv, md);
    }
    out << "first-stage " << s.statistic << ": " << format_number(s.robustF) << '\n';
    return ok;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    if (rc.dgp.empty()) throw UserError("--dgp is required");
    Emitter em(rc, log);
    DiscreteDgp d = resolve_dgp(rc.dgp);
    Dataset ds = sample(d, rc.n, rc.seed, rc.withU);
    Metadata md = base_metadata(rc, "simulate");
    md.set("dgp", d.name).set("seed", rc.seed).set("n", rc.n).set("rng", kRngName);
    em.write("sample.csv", write_csv(ds));
    json model = d.model_config().to_json();
    em.json_file("model.json", model, md);
    out << "sampled " << ds.n() << " rows from " << d.name << '\n';
    return ok;
}

DiscreteDgp random_from_flag(const std::string& name, std::uint64_t seed) {
    for (auto r : all_random_regimes())
        if (to_string(r) == name) return random_dgp(r, seed);
    std::vector<std::string> known;
    for (auto r : all_random_regimes()) known.push_back(to_string(r));
    throw UserError("unknown random regime '" + name + "' (known: " + join(known, ", ") + ")");
}

int cmd_oracle(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    if (rc.dgp.empty() == rc.randomRegime.empty()) throw UserError("give exactly one of --dgp and --random");
    DiscreteDgp d = rc.dgp.empty() ? random_from_flag(rc.randomRegime, rc.seed) : resolve_dgp(rc.dgp);
    if (!rc.exportDgp.empty()) {
        std::ofstream o(rc.exportDgp, std::ios::binary);
        if (!o) throw UserError("cannot write '" + rc.exportDgp + "'");
        o << d.to_json().dump(2) << '\n';
        log << "[ivgap] wrote " << rc.exportDgp << '\n';
    }
    Emitter em(rc, log);
    log << "[ivgap] enumerating " << d.name << '\n';
    OracleReport rep = verify_identities(d, rc.tol);
    Metadata md = base_metadata(rc, "oracle-check");
    md.set("dgp", d.name).set("mode", to_string(d.mode)).set("tolerance", rc.tol);
    if (em.json_on()) em.json_file("oracle_report.json", rep.to_json(), md);
    if (em.csv_on()) {
        std::string csv = "id,applicable,residual,tolerance,passed\n";
        for (const auto& c : rep.checks)
            csv += c.id + "," + (c.applicable ? "true" : "false") + "," + format_csv_number(c.residual) + "," +
                   format_csv_number(c.tolerance) + "," + (c.passed() ? "true" : "false") + "\n";
        em.csv_file("oracle_checks.csv", csv, md);
    }
    for (const auto& c : rep.checks) {
        out << (c.applicable ? (c.passed() ? "PASS " : "FAIL ") : "n/a  ") << c.id << "  residual "
            << format_number(c.residual);
        if (!c.applicable) out << "  (" << c.reason << ")";
        out << '\n';
    }
    if (!rep.allPassed()) {
        log << "error: oracle identities failed for " << d.name << '\n';
        return numerical_error;
    }
    return ok;
}

int cmd_mc(const RunConfig& rc, std::ostream& out, std::ostream& log) {
    if (rc.dgp.empty()) throw UserError("--dgp is required");
    Emitter em(rc, log);
    DiscreteDgp d = resolve_dgp(rc.dgp);
    McOptions o;
    o.n = rc.n;
    o.reps = rc.reps;
    o.seed = rc.seed;
    o.threads = rc.threads;
    o.seRegime = rc.se;
    log << "[ivgap] monte carlo: " << rc.reps << " reps of n=" << rc.n << '\n';
    McSummary s = mc_study(d, o);
    Metadata md = base_metadata(rc, "mc-study");
    md.set("dgp", d.name).set("seed", rc.seed).set("n", rc.n).set("reps", rc.reps).set("rng", kRngName);
    md.set("mode", to_string(d.mode));
    md.set("se_regime", rc.se ? *rc.se : to_string(default_regime(d.mode)));
    if (em.csv_on()) em.csv_file("mc_summary.csv", s.to_csv(), md);
    if (em.json_on()) em.json_file("mc_summary.json", s.to_json(), md);
    out << s.to_csv();
    return ok;
}

void add_frame_opts(CLI::App* sc, RunConfig& rc) {
    sc->add_option("--data", rc.data, "CSV data file")->required();
    sc->add_option("--model", rc.model, "model configuration JSON")->required();
    sc->add_option("--mode", rc.mode, "standard | did-rd | auto");
    sc->add_option("--cluster", rc.cluster, "cluster column");
    sc->add_option("--weights", rc.weights, "row weight column");
}

void add_common(CLI::App* sc, RunConfig& rc) {
    sc->add_option("--out", rc.out, "output directory")->capture_default_str();
    sc->add_option("--format", rc.format, "json | csv | both")->capture_default_str();
    sc->add_option("--threads", rc.threads, "thread count")->check(CLI::PositiveNumber);
    sc->add_option("--seed", rc.seed, "random seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig rc;
    CLI::App app{"ivgap: decompose the IV-OLS coefficient gap", "ivgap"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", kVersion);

    auto* dec = app.add_subcommand("decompose", "four coefficients and the three-part gap decomposition");
    add_frame_opts(dec, rc);
    add_common(dec, rc);
    dec->add_option("--se", rc.se, "plugin | corrected");
    dec->add_flag("--dwh", rc.dwh, "also run the endogeneity test");

    auto* wts = app.add_subcommand("weights", "treatment-level and group weight profiles");
    add_frame_opts(wts, rc);
    add_common(wts, rc);
    wts->add_option("--bin", rc.bin, "merge levels until each block has this share");
    wts->add_flag("--no-subsample-ols", rc.noSubsample, "skip per-group OLS");

    auto* dwh = app.add_subcommand("dwh-test", "generalized endogeneity test");
    add_frame_opts(dwh, rc);
    add_common(dwh, rc);
    dwh->add_option("--se", rc.se, "plugin | corrected");

    auto* fst = app.add_subcommand("first-stage", "first-stage diagnostics");
    add_frame_opts(fst, rc);
    add_common(fst, rc);

    auto* sim = app.add_subcommand("simulate", "draw a sample from a discrete dgp");
    add_common(sim, rc);
    sim->add_option("--dgp", rc.dgp, "builtin name or dgp JSON")->required();
    sim->add_option("--n", rc.n, "sample size")->check(CLI::PositiveNumber);
    sim->add_flag("--with-u", rc.withU, "include the unobservable");

    auto* orc = app.add_subcommand("oracle-check", "exact enumeration and identity checks");
    add_common(orc, rc);
    orc->add_option("--dgp", rc.dgp, "builtin name or dgp JSON");
    orc->add_option("--random", rc.randomRegime, "random population regime, drawn with --seed");
    orc->add_option("--tol", rc.tol, "residual tolerance")->capture_default_str();
    orc->add_option("--export-dgp", rc.exportDgp, "write the dgp JSON to this path");

    auto* mc = app.add_subcommand("mc-study", "Monte Carlo study against the oracle");
    add_common(mc, rc);
    mc->add_option("--dgp", rc.dgp, "builtin name or dgp JSON")->required();
    mc->add_option("--n", rc.n, "sample size per replication")->check(CLI::PositiveNumber);
    mc->add_option("--reps", rc.reps, "replications");
    mc->add_option("--se", rc.se, "plugin | corrected");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return user_error;
    }

    try {
        if (*dec) return cmd_decompose(rc, out, err);
        if (*wts) return cmd_weights(rc, out, err);
        if (*dwh) return cmd_dwh(rc, out, err);
        if (*fst) return cmd_first_stage(rc, out, err);
        if (*sim) return cmd_simulate(rc, out, err);
        if (*orc) return cmd_oracle(rc, out, err);
        if (*mc) return cmd_mc(rc, out, err);
    } catch (const UserError& e) {
        err << "error: " << e.what() << '\n';
        return user_error;
    } catch (const RankError& e) {
        err << "numerical error: " << e.what();
        if (!e.columns.empty()) err << " [" << join(e.columns, ", ") << "]";
        err << '\n';
        return numerical_error;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return numerical_error;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << '\n';
        return user_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return numerical_error;
    }
    return user_error;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace ivgap::cli
