#include "ivgap/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ivgap/condmean.hpp"
#include "ivgap/inference.hpp"
#include "ivgap/report.hpp"

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

double se_of(const VectorXd& psi, const ClusterIndex& c) {
    if (c.count < 2) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(std::max(0.0, clustered_variance(psi, c)));
}

struct Denoms {
    double ols, iv;
};

Denoms denominators(const ResidualizedFrame& rf) {
    const VectorXd& w = rf.frame->weights;
    Denoms d;
    d.ols = w.dot(rf.xt.cwiseProduct(rf.xt));
    d.iv = rf.ivDenominator();
    if (!(d.ols > 0)) throw NumericalError("degenerate treatment: residualized X has no variation given W");
    if (!(std::abs(d.iv) > tau_denom * rf.sw))
        throw RelevanceError("instrument not relevant: IV denominator is numerically zero", 0.0);
    return d;
}

}  // namespace

WeightProfile treatment_level_weights(const ResidualizedFrame& rf, double binFloor) {
    const auto& f = *rf.frame;
    const VectorXd& w = f.weights;
    const bool did = rf.mode == Mode::did_rd;
    Denoms den = denominators(rf);
    std::vector<double> s = treatment_support(f);
    WeightProfile prof;
    prof.mode = rf.mode;
    prof.binFloor = binFloor;
    if (s.size() < 2) return prof;

    std::vector<double> mass(s.size(), 0.0);
    for (Index i = 0; i < f.x.size(); ++i) {
        if (!(w(i) > 0)) continue;
        auto pos = std::lower_bound(s.begin(), s.end(), f.x(i)) - s.begin();
        mass[static_cast<std::size_t>(pos)] += w(i);
    }
    for (auto& m : mass) m /= rf.sw;

    // blocks of consecutive levels (indices into s, all >= 1)
    std::vector<std::pair<std::size_t, std::size_t>> blocks;
    {
        std::size_t start = 1;
        double acc = 0.0;
        for (std::size_t j = 1; j < s.size(); ++j) {
            acc += mass[j];
            if (acc >= binFloor) {
                blocks.emplace_back(start, j);
                start = j + 1;
                acc = 0.0;
            }
        }
        if (start < s.size()) {
            if (blocks.empty()) blocks.emplace_back(start, s.size() - 1);
            else blocks.back().second = s.size() - 1;
        }
    }

    // combined indicator sum_j gap_j 1{X >= s_j} per block, residualized in chunks
    const Index nb = static_cast<Index>(blocks.size());
    const Index n = f.x.size();
    constexpr Index chunk = 16;
    for (Index b0 = 0; b0 < nb; b0 += chunk) {
        const Index m = std::min(chunk, nb - b0);
        MatrixXd D = MatrixXd::Zero(n, m);
        for (Index b = 0; b < m; ++b) {
            auto [lo, hi] = blocks[static_cast<std::size_t>(b0 + b)];
            for (std::size_t j = lo; j <= hi; ++j) {
                double gap = s[j] - s[j - 1];
                for (Index i = 0; i < n; ++i)
                    if (f.x(i) >= s[j]) D(i, b) += gap;
            }
        }
        MatrixXd Dt = D;
        f.projector->residualize_inplace(Dt);
        for (Index b = 0; b < m; ++b) {
            auto [lo, hi] = blocks[static_cast<std::size_t>(b0 + b)];
            LevelWeight r;
            r.level = s[lo];
            r.levelHigh = s[hi];
            for (std::size_t j = lo; j <= hi; ++j) r.share += mass[j];
            VectorXd dt = Dt.col(b);
            r.olsWeight = w.dot(dt.cwiseProduct(rf.xt)) / den.ols;
            VectorXd psiO = w.cwiseProduct(rf.xt).cwiseProduct(dt - r.olsWeight * rf.xt) / den.ols;
            VectorXd psiI;
            if (did) {
                VectorXd draw = D.col(b);
                r.ivWeight = w.dot(draw.cwiseProduct(rf.zt)) / den.iv;
                psiI = w.cwiseProduct(rf.zt).cwiseProduct(draw - r.ivWeight * f.x) / den.iv;
            } else {
                r.ivWeight = w.dot(dt.cwiseProduct(rf.zt)) / den.iv;
                psiI = w.cwiseProduct(rf.zt).cwiseProduct(dt - r.ivWeight * rf.xt) / den.iv;
            }
            r.olsSe = se_of(psiO, f.clusters);
            r.ivSe = se_of(psiI, f.clusters);
            prof.rows.push_back(r);
        }
    }
    return prof;
}

GroupTable group_weights(const ResidualizedFrame& rf, const Partition& partition, bool subsampleOls,
                         const std::string& name) {
    const auto& f = *rf.frame;
    const VectorXd& w = f.weights;
    const bool did = rf.mode == Mode::did_rd;
    if (partition.codes.size() != f.n()) throw UserError("partition does not cover every row of the frame");
    Denoms den = denominators(rf);
    GroupTable t;
    t.name = name;
    const VectorXd x2 = rf.xt.cwiseProduct(rf.xt);
    const VectorXd xz = did ? VectorXd(f.x.cwiseProduct(rf.zt)) : VectorXd(rf.xt.cwiseProduct(rf.zt));
    const Index n = static_cast<Index>(f.n());
    for (std::size_t g = 0; g < partition.labels.size(); ++g) {
        VectorXd ind = VectorXd::Zero(n);
        std::size_t count = 0;
        for (Index i = 0; i < n; ++i)
            if (partition.codes[static_cast<std::size_t>(i)] == static_cast<int>(g)) {
                ind(i) = 1.0;
                ++count;
            }
        double mass = w.dot(ind);
        if (count == 0 || !(mass > 0)) throw UserError("group '" + partition.labels[g] + "' is empty or has zero weight");
        GroupWeightRow r;
        r.label = partition.labels[g];
        r.rows = count;
        r.share = mass / rf.sw;
        r.olsWeight = w.dot(ind.cwiseProduct(x2)) / den.ols;
        r.olsSe = se_of(w.cwiseProduct(ind - VectorXd::Constant(n, r.olsWeight)).cwiseProduct(x2) / den.ols, f.clusters);
        VectorXd lg = ind;
        if (did) {
            ProjectionResult pr = f.projector->project(ind);
            r.projected = pr.residuals.cwiseAbs().maxCoeff() > 1e-8;
            lg = pr.fitted;
        }
        r.ivWeight = w.dot(lg.cwiseProduct(xz)) / den.iv;
        r.ivSe = se_of(w.cwiseProduct(lg - VectorXd::Constant(n, r.ivWeight)).cwiseProduct(xz) / den.iv, f.clusters);
        if (subsampleOls) {
            try {
                SubsampleOls so = subsample_ols(f, [&](std::size_t i) { return partition.codes[i] == static_cast<int>(g); });
                r.subsampleOls = so.estimate;
                if (!so.droppedColumns.empty()) r.subsampleNote = "dropped constant columns: " + join(so.droppedColumns, ", ");
            } catch (const NumericalError& e) {
                r.subsampleNote = e.what();
            }
        }
        t.rows.push_back(std::move(r));
    }
    std::vector<double> iv, ols;
    for (const auto& r : t.rows) {
        iv.push_back(r.ivWeight);
        ols.push_back(r.olsWeight);
    }
    t.negativeIv = negative_summary(iv);
    t.negativeOls = negative_summary(ols);
    return t;
}

NegativeSummary negative_summary(const std::vector<double>& weights) {
    NegativeSummary s;
    for (double v : weights)
        if (v < 0) {
            ++s.count;
            s.sum += v;
        }
    return s;
}

json WeightProfile::to_json() const {
    json j;
    j["mode"] = to_string(mode);
    j["bin_floor"] = binFloor;
    j["levels"] = json::array();
    std::vector<double> iv;
    for (const auto& r : rows) {
        j["levels"].push_back({{"level", r.level},
                               {"level_high", r.levelHigh},
                               {"share", r.share},
                               {"ols_weight", r.olsWeight},
                               {"ols_se", r.olsSe},
                               {"iv_weight", r.ivWeight},
                               {"iv_se", r.ivSe}});
        iv.push_back(r.ivWeight);
    }
    auto neg = negative_summary(iv);
    j["negative_iv_weights"] = {{"count", neg.count}, {"sum", neg.sum}};
    return j;
}

json GroupTable::to_json() const {
    json j;
    j["grouping"] = name;
    j["groups"] = json::array();
    for (const auto& r : rows) {
        json g = {{"group", r.label},
                  {"rows", r.rows},
                  {"share", r.share},
                  {"ols_weight", r.olsWeight},
                  {"ols_se", r.olsSe},
                  {"iv_weight", r.ivWeight},
                  {"iv_se", r.ivSe},
                  {"projected", r.projected}};
        g["subsample_ols"] = r.subsampleOls ? r.subsampleOls->to_json() : json(nullptr);
        if (!r.subsampleNote.empty()) g["subsample_note"] = r.subsampleNote;
        j["groups"].push_back(g);
    }
    j["negative_iv_weights"] = {{"count", negativeIv.count}, {"sum", negativeIv.sum}};
    j["negative_ols_weights"] = {{"count", negativeOls.count}, {"sum", negativeOls.sum}};
    return j;
}

WeightReport weight_report(const WeightProfile& profile, const std::vector<GroupTable>& groups) {
    return WeightReport{profile, groups};
}

json WeightReport::to_json() const {
    json j;
    j["levels"] = profile.to_json();
    j["groupings"] = json::array();
    for (const auto& g : groups) j["groupings"].push_back(g.to_json());
    return j;
}

std::string WeightReport::levels_csv() const {
    std::string out = "level,level_high,share,ols_weight,ols_se,iv_weight,iv_se\n";
    for (const auto& r : profile.rows) {
        for (double v : {r.level, r.levelHigh, r.share, r.olsWeight, r.olsSe, r.ivWeight}) out += format_csv_number(v) + ",";
        out += format_csv_number(r.ivSe) + "\n";
    }
    return out;
}

std::string WeightReport::groups_csv() const {
    std::string out;
    for (const auto& g : groups)
        out += "# negative_iv_weights[" + g.name + "]=count:" + std::to_string(g.negativeIv.count) +
               ",sum:" + format_csv_number(g.negativeIv.sum) + "\n";
    out += "grouping,group,share,ols_weight,ols_se,iv_weight,iv_se,subsample_ols,subsample_ols_se,projected\n";
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    for (const auto& g : groups)
        for (const auto& r : g.rows) {
            out += quote(g.name) + "," + quote(r.label) + ",";
            for (double v : {r.share, r.olsWeight, r.olsSe, r.ivWeight, r.ivSe}) out += format_csv_number(v) + ",";
            if (r.subsampleOls) {
                out += format_csv_number(r.subsampleOls->value) + ",";
                out += (r.subsampleOls->se ? format_csv_number(*r.subsampleOls->se) : "NA") + ",";
            } else {
                out += "NA,NA,";
            }
            out += std::string(r.projected ? "true" : "false") + "\n";
        }
    return out;
}

}  // namespace ivgap
