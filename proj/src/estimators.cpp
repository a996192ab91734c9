#include "ivgap/estimators.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include "ivgap/inference.hpp"

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

json CoefEstimate::to_json() const {
    json j;
    j["value"] = value;
    j["se"] = se ? json(*se) : json(nullptr);
    j["denominator"] = denominator;
    return j;
}

FirstStageFit first_stage_fit(const ModelFrame& frame) {
    const auto& proj = *frame.projector;
    VectorXd xt = proj.residualize(frame.x);
    const auto m = static_cast<int>(frame.zraw.cols());
    auto build = [&](const std::vector<int>& cols) {
        MatrixXd C(frame.zraw.rows(), static_cast<Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) C.col(static_cast<Index>(j)) = frame.zraw.col(cols[j]);
        return C;
    };
    ExtrasFit ef = fit_extras(proj, build, m, xt, false, frame.instrumentNames, "first stage (instruments given W)");
    FirstStageFit fs;
    fs.pi = ef.coef;
    VectorXd zpi = frame.zraw * fs.pi;
    fs.wCoef = proj.coefficients(VectorXd(frame.x - zpi));
    fs.synthetic = frame.W() * fs.wCoef + zpi;
    fs.zt = proj.residualize(zpi);
    return fs;
}

VectorXd make_synthetic_instrument(const ModelFrame& frame) { return first_stage_fit(frame).synthetic; }

namespace {

double ratio_se(const VectorXd& psi, const ClusterIndex& c) {
    if (c.count < 2) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(std::max(0.0, clustered_variance(psi, c)));
}

}  // namespace

CoefEstimate ols_beta(const ResidualizedFrame& rf) {
    const VectorXd& w = rf.frame->weights;
    double den = (w.array() * rf.xt.array().square()).sum();
    double scale = (w.array() * rf.frame->x.array().square()).sum();
    if (!(den > tau_rank * tau_rank * scale) || !(den > 0))
        throw NumericalError("degenerate treatment: residualized X has no variation given W");
    CoefEstimate c;
    c.denominator = den;
    c.value = (w.array() * rf.yt.array() * rf.xt.array()).sum() / den;
    VectorXd psi = (w.array() * (rf.yt - c.value * rf.xt).array() * rf.xt.array()).matrix() / den;
    double se = ratio_se(psi, rf.frame->clusters);
    if (std::isfinite(se)) c.se = se;
    return c;
}

CoefEstimate iv_beta(const ResidualizedFrame& rf) {
    const VectorXd& w = rf.frame->weights;
    double den = rf.ivDenominator();
    if (!(std::abs(den) > tau_denom * rf.sw)) {
        double f = 0.0;
        try {
            f = first_stage_summary(*rf.frame).robustF;
        } catch (const Error&) {
        }
        throw RelevanceError("instrument not relevant: |sum w X~ Z~| = " + format_number(std::abs(den)) +
                                 " (first-stage robust Wald F = " + format_number(f) + ")",
                             f);
    }
    CoefEstimate c;
    c.denominator = den;
    VectorXd psi;
    if (rf.mode == Mode::did_rd) {
        c.value = (w.array() * rf.frame->y.array() * rf.zt.array()).sum() / den;
        psi = (w.array() * (rf.frame->y - c.value * rf.frame->x).array() * rf.zt.array()).matrix() / den;
    } else {
        c.value = (w.array() * rf.yt.array() * rf.zt.array()).sum() / den;
        psi = (w.array() * (rf.yt - c.value * rf.xt).array() * rf.zt.array()).matrix() / den;
    }
    double se = ratio_se(psi, rf.frame->clusters);
    if (std::isfinite(se)) c.se = se;
    return c;
}

FirstStageSummary first_stage_summary(const ModelFrame& frame) {
    const auto& proj = *frame.projector;
    FirstStageFit fs = first_stage_fit(frame);
    MatrixXd Zt = proj.residualize(MatrixXd(frame.zraw));
    VectorXd xt = proj.residualize(frame.x);
    VectorXd e = xt - Zt * fs.pi;
    const VectorXd& w = frame.weights;
    const Index m = Zt.cols();

    FirstStageSummary s;
    s.wNames = frame.wNames;
    s.wCoef = fs.wCoef;
    s.clusters = frame.clusters.count;
    MatrixXd A = Zt.transpose() * w.asDiagonal() * Zt;
    MatrixXd Ainv = A.inverse();
    MatrixXd scores = (Zt.array().colwise() * (w.array() * e.array())).matrix();
    MatrixXd V = Ainv * clustered_meat(scores, frame.clusters) * Ainv;
    double xscale = std::sqrt((w.array() * xt.array().square()).sum());
    double escale = std::sqrt((w.array() * e.array().square()).sum());
    s.perfectFit = escale <= 1e-12 * xscale;
    for (Index j = 0; j < m; ++j) {
        FirstStageSummary::Row r;
        r.name = frame.instrumentNames[static_cast<std::size_t>(j)];
        r.coef = fs.pi(j);
        r.se = std::sqrt(std::max(0.0, V(j, j)));
        r.t = r.se > 0 ? r.coef / r.se : (r.coef != 0 ? DBL_MAX : 0.0);
        s.instruments.push_back(r);
    }
    if (s.perfectFit) {
        s.robustF = DBL_MAX;
    } else {
        Eigen::LDLT<MatrixXd> ldlt(V);
        double f = (ldlt.info() == Eigen::Success) ? fs.pi.dot(ldlt.solve(fs.pi)) / static_cast<double>(m) : DBL_MAX;
        s.robustF = std::isfinite(f) ? std::min(f, DBL_MAX) : DBL_MAX;
    }
    return s;
}

json FirstStageSummary::to_json() const {
    json j;
    j["statistic"] = statistic;
    j["robust_wald_f"] = robustF;
    j["perfect_fit"] = perfectFit;
    j["clusters"] = clusters;
    j["instruments"] = json::array();
    for (const auto& r : instruments) j["instruments"].push_back({{"name", r.name}, {"coef", r.coef}, {"se", r.se}, {"t", r.t}});
    j["covariates"] = json::array();
    for (std::size_t k = 0; k < wNames.size(); ++k)
        j["covariates"].push_back({{"name", wNames[k]}, {"coef", wCoef(static_cast<Index>(k))}});
    return j;
}

SubsampleOls subsample_ols(const ModelFrame& frame, const std::function<bool(std::size_t)>& keep) {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < frame.n(); ++i)
        if (keep(i)) rows.push_back(static_cast<Index>(i));
    if (rows.empty()) throw NumericalError("subsample OLS: empty subsample");
    const auto ns = static_cast<Index>(rows.size());
    const MatrixXd& W = frame.W();
    MatrixXd Ws(ns, W.cols());
    VectorXd ys(ns), xs(ns), ws(ns);
    std::vector<int> cl(rows.size());
    for (Index r = 0; r < ns; ++r) {
        Ws.row(r) = W.row(rows[static_cast<std::size_t>(r)]);
        ys(r) = frame.y(rows[static_cast<std::size_t>(r)]);
        xs(r) = frame.x(rows[static_cast<std::size_t>(r)]);
        ws(r) = frame.weights(rows[static_cast<std::size_t>(r)]);
        cl[static_cast<std::size_t>(r)] = frame.clusters.codes[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
    }
    if (!(ws.sum() > 0)) throw NumericalError("subsample OLS: subsample has zero total weight");
    VectorXd sq = ws.cwiseSqrt();
    MatrixXd scaled = sq.asDiagonal() * Ws;
    VectorXd norms = scaled.colwise().norm().transpose();
    auto dep = ordered_dependent_columns(scaled, norms);
    SubsampleOls out;
    out.rows = rows.size();
    std::vector<Index> keepCols;
    std::vector<std::string> keptNames;
    for (Index j = 0; j < W.cols(); ++j) {
        if (std::find(dep.begin(), dep.end(), static_cast<int>(j)) != dep.end())
            out.droppedColumns.push_back(frame.wNames[static_cast<std::size_t>(j)]);
        else {
            keepCols.push_back(j);
            keptNames.push_back(frame.wNames[static_cast<std::size_t>(j)]);
        }
    }
    if (keepCols.empty() || static_cast<Index>(keepCols.size()) + 1 > ns)
        throw NumericalError("subsample OLS: rank collapse on the subsample");
    MatrixXd Wk(ns, static_cast<Index>(keepCols.size()));
    for (std::size_t j = 0; j < keepCols.size(); ++j) Wk.col(static_cast<Index>(j)) = Ws.col(keepCols[j]);
    WeightedProjector proj(std::move(Wk), ws, keptNames);
    VectorXd yt = proj.residualize(ys), xt = proj.residualize(xs);
    double den = (ws.array() * xt.array().square()).sum();
    double scale = (ws.array() * xs.array().square()).sum();
    if (!(den > tau_rank * tau_rank * scale) || !(den > 0))
        throw NumericalError("subsample OLS: treatment has no variation given W on the subsample");
    out.estimate.denominator = den;
    out.estimate.value = (ws.array() * yt.array() * xt.array()).sum() / den;
    ClusterIndex ci = ClusterIndex::from_codes(cl);
    if (ci.count >= 2) {
        VectorXd psi = (ws.array() * (yt - out.estimate.value * xt).array() * xt.array()).matrix() / den;
        out.estimate.se = std::sqrt(std::max(0.0, clustered_variance(psi, ci)));
    }
    return out;
}

}  // namespace ivgap
