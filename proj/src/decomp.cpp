#include "ivgap/decomp.hpp"

#include <cmath>

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

double checked_iv_denominator(const ResidualizedFrame& rf) {
    double den = rf.ivDenominator();
    if (!(std::abs(den) > tau_denom * rf.sw))
        throw RelevanceError("instrument not relevant: IV denominator is numerically zero", 0.0);
    return den;
}

json vcov_json(const Eigen::Matrix4d& V) {
    json j = json::array();
    for (int r = 0; r < 4; ++r) {
        json row = json::array();
        for (int c = 0; c < 4; ++c) row.push_back(V(r, c));
        j.push_back(row);
    }
    return j;
}

json gap_json(double value, double se) { return json{{"value", value}, {"se", se}}; }

}  // namespace

CoefEstimate beta_ols_c(const ResidualizedFrame& rf, const SlopeFit& slope) {
    const auto& f = *rf.frame;
    double den = checked_iv_denominator(rf);
    VectorXd b = slope.bAll(f.W());
    const VectorXd& xx = rf.mode == Mode::did_rd ? f.x : rf.xt;
    CoefEstimate c;
    c.denominator = den;
    c.value = f.weights.dot(b.cwiseProduct(xx).cwiseProduct(rf.zt)) / den;
    return c;
}

CoefEstimate beta_ols_cl(const ResidualizedFrame& rf, const CondMeanFit& cm) {
    const auto& f = *rf.frame;
    if (cm.basis.terms.size() != static_cast<std::size_t>(rf.pt.cols()))
        throw UserError("conditional-mean fit and residualized frame use different bases");
    double den = checked_iv_denominator(rf);
    const MatrixXd& P = rf.mode == Mode::did_rd ? rf.p : rf.pt;
    VectorXd s = VectorXd::Zero(P.rows());
    for (Index k = 0; k < P.cols(); ++k) s += cm.alphaAt(static_cast<int>(k), f.W()).cwiseProduct(P.col(k));
    CoefEstimate c;
    c.denominator = den;
    c.value = f.weights.dot(s.cwiseProduct(rf.zt)) / den;
    return c;
}

DecompositionResult decompose(const ModelFrame& frame, const DecomposeOptions& opts) {
    BasisSpec basis = opts.basis ? *opts.basis : default_basis(frame);
    std::vector<int> hetero = opts.slopeHetero.empty() ? std::vector<int>{0} : opts.slopeHetero;
    ResidualizedFrame rf = residualize_frame(frame, basis);
    checked_iv_denominator(rf);
    SlopeFit slope = fit_slope_model(frame, hetero);
    CondMeanFit cm = fit_condmean_model(frame, basis);
    StackedResult st = stacked_vcov(rf, slope, cm);

    DecompositionResult r;
    r.mode = frame.mode;
    r.regime = opts.regime ? *opts.regime : default_regime(frame.mode);
    r.n = frame.n();
    r.clusters = frame.clusters.count;
    r.vcovPlugin = st.vcovPlugin;
    r.vcovCorrected = st.vcovCorrected;
    r.jointVcov = st.vcov(r.regime);
    const SeRegime other = r.regime == SeRegime::plugin ? SeRegime::corrected : SeRegime::plugin;
    CoefEstimate* out[4] = {&r.betaOls, &r.betaOlsC, &r.betaOlsCL, &r.betaIv};
    for (int t = 0; t < 4; ++t) {
        out[t]->value = st.beta(t);
        out[t]->denominator = st.denominators(t);
        out[t]->se = std::sqrt(std::max(0.0, r.jointVcov(t, t)));
    }
    r.covariateWeightDiff = r.betaOlsC.value - r.betaOls.value;
    r.treatmentLevelWeightDiff = r.betaOlsCL.value - r.betaOlsC.value;
    r.marginalEffectDiff = r.betaIv.value - r.betaOlsCL.value;
    r.totalGap = r.betaIv.value - r.betaOls.value;
    r.componentSes = gap_component_ses(r.jointVcov);
    r.componentSesAlt = gap_component_ses(st.vcov(other));
    r.slopeColumns = slope.names;
    r.basisColumns = cm.names;
    r.prunedBasisColumns = cm.pruned;
    r.basis = basis.to_json(frame.wNames);
    r.warnings = frame.warnings;
    if (opts.dwh) r.dwh = dwh_test(rf, cm, r.regime);
    return r;
}

DecompositionResult decompose(const ModelFrame& frame, std::optional<SeRegime> regime, bool dwh) {
    DecomposeOptions o;
    o.dwh = dwh;
    o.slopeHetero = parse_hetero(frame.config.slopeHeterogeneity, frame.wNames);
    o.basis = basis_from_config(frame, frame.config.basis);
    o.regime = regime;
    return decompose(frame, o);
}

json DecompositionResult::to_json() const {
    json j;
    j["mode"] = to_string(mode);
    j["se_regime"] = to_string(regime);
    j["n"] = n;
    j["clusters"] = clusters;
    j["coefficients"] = {{"beta_ols", betaOls.to_json()},
                         {"beta_ols_c", betaOlsC.to_json()},
                         {"beta_ols_cl", betaOlsCL.to_json()},
                         {"beta_iv", betaIv.to_json()}};
    j["components"] = {{"covariate_weight_diff", gap_json(covariateWeightDiff, componentSes.covariate)},
                       {"treatment_level_weight_diff", gap_json(treatmentLevelWeightDiff, componentSes.treatmentLevel)},
                       {"marginal_effect_diff", gap_json(marginalEffectDiff, componentSes.marginalEffect)},
                       {"total_gap", gap_json(totalGap, componentSes.total)}};
    j["component_ses_" + to_string(regime == SeRegime::plugin ? SeRegime::corrected : SeRegime::plugin)] = {
        {"covariate_weight_diff", componentSesAlt.covariate},
        {"treatment_level_weight_diff", componentSesAlt.treatmentLevel},
        {"marginal_effect_diff", componentSesAlt.marginalEffect},
        {"total_gap", componentSesAlt.total}};
    j["joint_vcov"] = vcov_json(jointVcov);
    j["vcov_plugin"] = vcov_json(vcovPlugin);
    j["vcov_corrected"] = vcov_json(vcovCorrected);
    j["slope_model"] = {{"columns", slopeColumns}};
    j["conditional_mean_model"] = {{"basis", basis}, {"columns", basisColumns}, {"pruned", prunedBasisColumns}};
    if (dwh) j["dwh"] = dwh->to_json();
    j["warnings"] = warnings;
    return j;
}

}  // namespace ivgap
