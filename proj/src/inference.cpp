#include "ivgap/inference.hpp"

#include <cmath>

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

std::string to_string(SeRegime r) { return r == SeRegime::plugin ? "plugin" : "corrected"; }

SeRegime parse_se_regime(std::string_view s) {
    if (s == "plugin") return SeRegime::plugin;
    if (s == "corrected") return SeRegime::corrected;
    throw UserError("unknown SE regime '" + std::string(s) + "' (expected plugin or corrected)");
}

SeRegime default_regime(Mode m) { return m == Mode::standard ? SeRegime::plugin : SeRegime::corrected; }

double cluster_factor(int clusters) {
    if (clusters < 2) throw NumericalError("cluster-robust variance needs at least 2 clusters");
    return static_cast<double>(clusters) / static_cast<double>(clusters - 1);
}

MatrixXd clustered_meat(const MatrixXd& psi, const ClusterIndex& c) {
    double f = cluster_factor(c.count);
    MatrixXd S = MatrixXd::Zero(c.count, psi.cols());
    for (Index i = 0; i < psi.rows(); ++i) S.row(c.codes[static_cast<std::size_t>(i)]) += psi.row(i);
    return f * (S.transpose() * S);
}

double clustered_variance(const VectorXd& psi, const ClusterIndex& c) {
    double f = cluster_factor(c.count);
    VectorXd s = VectorXd::Zero(c.count);
    for (Index i = 0; i < psi.size(); ++i) s(c.codes[static_cast<std::size_t>(i)]) += psi(i);
    return f * s.squaredNorm();
}

double normal_two_sided_p(double t) { return std::erfc(std::abs(t) / std::sqrt(2.0)); }

namespace {

// residualized regressors entering a target moment: R~ and dmu/dR~
struct ProjTerm {
    const VectorXd* resid;
    VectorXd d;
    int block;  // 0 Y, 1 X, 2 Z, 3+k P_k
};

struct Parts {
    VectorXd mu, den;
    std::vector<ProjTerm> proj;
    VectorXd dB;       // dmu/db(W), slope model
    MatrixXd dAlpha;   // dmu/dalpha_k(W), conditional-mean model
};

struct Inputs {
    const ResidualizedFrame* rf;
    const VectorXd *yt, *xt, *zt;
    const MatrixXd* pt;
    VectorXd b;        // slope evaluator at W_i
    MatrixXd alpha;    // n x K
};

Parts target_parts(int t, double beta, const Inputs& in) {
    const auto& rf = *in.rf;
    const auto& f = *rf.frame;
    const bool did = rf.mode == Mode::did_rd;
    const VectorXd &yt = *in.yt, &xt = *in.xt, &zt = *in.zt;
    const MatrixXd& pt = *in.pt;
    const Index K = pt.cols();
    Parts p;
    switch (t) {
        case 0:
            p.mu = (yt - beta * xt).cwiseProduct(xt);
            p.den = xt.cwiseProduct(xt);
            p.proj.push_back({&yt, xt, 0});
            p.proj.push_back({&xt, yt - 2.0 * beta * xt, 1});
            break;
        case 1: {
            VectorXd bb = in.b.array() - beta;
            if (did) {
                p.mu = bb.cwiseProduct(f.x).cwiseProduct(zt);
                p.den = f.x.cwiseProduct(zt);
                p.dB = f.x.cwiseProduct(zt);
                p.proj.push_back({&zt, bb.cwiseProduct(f.x), 2});
            } else {
                p.mu = bb.cwiseProduct(xt).cwiseProduct(zt);
                p.den = xt.cwiseProduct(zt);
                p.dB = xt.cwiseProduct(zt);
                p.proj.push_back({&xt, bb.cwiseProduct(zt), 1});
                p.proj.push_back({&zt, bb.cwiseProduct(xt), 2});
            }
            break;
        }
        case 2: {
            const MatrixXd& P = did ? rf.p : pt;
            VectorXd S = (in.alpha.cwiseProduct(P)).rowwise().sum();
            const VectorXd& xx = did ? f.x : xt;
            p.mu = (S - beta * xx).cwiseProduct(zt);
            p.den = xx.cwiseProduct(zt);
            p.dAlpha = (P.array().colwise() * zt.array()).matrix();
            if (!did) {
                for (Index k = 0; k < K; ++k)
                    p.proj.push_back({nullptr, in.alpha.col(k).cwiseProduct(zt), 3 + static_cast<int>(k)});
                p.proj.push_back({&xt, -beta * zt, 1});
            }
            p.proj.push_back({&zt, S - beta * xx, 2});
            break;
        }
        case 3:
            if (did) {
                p.mu = (f.y - beta * f.x).cwiseProduct(zt);
                p.den = f.x.cwiseProduct(zt);
                p.proj.push_back({&zt, f.y - beta * f.x, 2});
            } else {
                p.mu = (yt - beta * xt).cwiseProduct(zt);
                p.den = xt.cwiseProduct(zt);
                p.proj.push_back({&yt, zt, 0});
                p.proj.push_back({&xt, -beta * zt, 1});
                p.proj.push_back({&zt, yt - beta * xt, 2});
            }
            break;
        default: break;
    }
    return p;
}

// DWH reduced-form moment (Y~ - Y*) Z~
Parts dwh_parts(const Inputs& in) {
    const auto& rf = *in.rf;
    const auto& f = *rf.frame;
    const bool did = rf.mode == Mode::did_rd;
    const VectorXd &yt = *in.yt, &zt = *in.zt;
    const MatrixXd& P = did ? rf.p : *in.pt;
    Parts p;
    VectorXd S = (in.alpha.cwiseProduct(P)).rowwise().sum();
    VectorXd r = did ? VectorXd(f.y - S) : VectorXd(yt - S);
    p.mu = r.cwiseProduct(zt);
    p.den = VectorXd::Ones(zt.size());
    p.dAlpha = -(P.array().colwise() * zt.array()).matrix();
    if (!did) {
        p.proj.push_back({&yt, zt, 0});
        for (Index k = 0; k < P.cols(); ++k) p.proj.push_back({nullptr, -in.alpha.col(k).cwiseProduct(zt), 3 + static_cast<int>(k)});
    }
    p.proj.push_back({&zt, r, 2});
    return p;
}

const VectorXd& resid_of(const ProjTerm& t, const Inputs& in, VectorXd& scratch) {
    if (t.resid) return *t.resid;
    scratch = in.pt->col(t.block - 3);
    return scratch;
}

// regression-block correction w_i e_i (C~ v)_i with v = (C~' w C~)^{-1} F
VectorXd regression_correction(const StageFit& fit, const ResidualizedFrame& rf, const MatrixXd& dmuW) {
    const auto& f = *rf.frame;
    VectorXd out = VectorXd::Zero(static_cast<Index>(f.n()));
    if (fit.kept() == 0) return out;
    VectorXd F = fit.gradient(f.W(), dmuW);
    VectorXd v = fit.R.triangularView<Eigen::Upper>().transpose().solve(F);
    v = fit.R.triangularView<Eigen::Upper>().solve(v);
    VectorXd cv = f.projector->residualize(fit.extrasTimes(f.W(), f.x, v));
    return f.weights.cwiseProduct(fit.residuals).cwiseProduct(cv);
}

struct Influence {
    VectorXd plugin, corrected;
    double B = 0.0;
};

Influence influence(const Parts& p, const Inputs& in, const SlopeFit* slope, const CondMeanFit* cm) {
    const auto& rf = *in.rf;
    const auto& f = *rf.frame;
    const VectorXd& w = f.weights;
    Influence out;
    out.B = w.dot(p.den);
    VectorXd base = w.cwiseProduct(p.mu);
    if (p.dB.size() && slope) {
        MatrixXd d = w.cwiseProduct(p.dB);
        base += regression_correction(*slope, rf, d);
    }
    if (p.dAlpha.size() && cm) {
        MatrixXd d = (p.dAlpha.array().colwise() * w.array()).matrix();
        base += regression_correction(*cm, rf, d);
    }
    VectorXd corr = base;
    VectorXd scratch;
    for (const auto& t : p.proj) {
        const VectorXd& r = resid_of(t, in, scratch);
        VectorXd l = f.W() * f.projector->coefficients(t.d);
        corr -= w.cwiseProduct(r).cwiseProduct(l);
    }
    out.plugin = base / out.B;
    out.corrected = corr / out.B;
    return out;
}

Inputs make_inputs(const ResidualizedFrame& rf, const SlopeFit* slope, const CondMeanFit* cm) {
    Inputs in;
    in.rf = &rf;
    in.yt = &rf.yt;
    in.xt = &rf.xt;
    in.zt = &rf.zt;
    in.pt = &rf.pt;
    const MatrixXd& W = rf.frame->W();
    if (slope) in.b = slope->bAll(W);
    const Index K = rf.pt.cols();
    in.alpha = MatrixXd::Zero(W.rows(), K);
    if (cm) {
        if (static_cast<Index>(cm->basis.terms.size()) != K)
            throw UserError("conditional-mean fit does not match the residualized frame's basis");
        for (Index k = 0; k < K; ++k) in.alpha.col(k) = cm->alphaAt(static_cast<int>(k), W);
    }
    return in;
}

}  // namespace

StackedResult stacked_vcov(const ResidualizedFrame& rf, const SlopeFit& slope, const CondMeanFit& cm) {
    const auto& f = *rf.frame;
    Inputs in = make_inputs(rf, &slope, &cm);
    StackedResult out;
    const bool did = rf.mode == Mode::did_rd;
    const VectorXd& w = f.weights;
    // point estimates
    {
        const MatrixXd& P = did ? rf.p : rf.pt;
        const VectorXd& xx = did ? f.x : rf.xt;
        double denIv = w.dot(xx.cwiseProduct(rf.zt));
        double denOls = w.dot(rf.xt.cwiseProduct(rf.xt));
        VectorXd S = (in.alpha.cwiseProduct(P)).rowwise().sum();
        out.beta(0) = w.dot(rf.yt.cwiseProduct(rf.xt)) / denOls;
        out.beta(1) = w.dot(in.b.cwiseProduct(xx).cwiseProduct(rf.zt)) / denIv;
        out.beta(2) = w.dot(S.cwiseProduct(rf.zt)) / denIv;
        out.beta(3) = did ? w.dot(f.y.cwiseProduct(rf.zt)) / denIv : w.dot(rf.yt.cwiseProduct(rf.zt)) / denIv;
        out.denominators << denOls, denIv, denIv, denIv;
    }
    const auto n = static_cast<Index>(f.n());
    out.psiPlugin.resize(n, 4);
    out.psiCorrected.resize(n, 4);
    for (int t = 0; t < 4; ++t) {
        Parts p = target_parts(t, out.beta(t), in);
        Influence inf = influence(p, in, &slope, &cm);
        out.psiPlugin.col(t) = inf.plugin;
        out.psiCorrected.col(t) = inf.corrected;
    }
    out.vcovPlugin = clustered_meat(out.psiPlugin, f.clusters);
    out.vcovCorrected = clustered_meat(out.psiCorrected, f.clusters);
    return out;
}

MatrixXd GmmSystem::vcov() const {
    Eigen::PartialPivLU<MatrixXd> lu(jacobian);
    MatrixXd Ginv = lu.inverse();
    return Ginv * meat() * Ginv.transpose();
}

FullSystem build_full_system(const ResidualizedFrame& rf, const SlopeFit& slope, const CondMeanFit& cm, SeRegime regime) {
    const auto& f = *rf.frame;
    const MatrixXd& W = f.W();
    const VectorXd& w = f.weights;
    const Index n = W.rows(), p = W.cols(), K = rf.pt.cols();
    const bool corrected = regime == SeRegime::corrected;
    const bool did = rf.mode == Mode::did_rd;

    MatrixXd D(n, p + slope.kept()), E(n, p + cm.kept());
    D << W, slope.build(W, f.x);
    E << W, cm.build(W, f.x);
    const Index nR = corrected ? 3 + K : 0;
    const Index offS = nR * p, offC = offS + D.cols(), offB = offC + E.cols(), q = offB + 4;

    FullSystem fs;
    auto& sys = fs.system;
    sys.clusters = f.clusters;
    sys.theta = VectorXd::Zero(q);
    auto addNames = [&](const std::string& pre, Index k) {
        for (Index j = 0; j < k; ++j) sys.names.push_back(pre + "[" + std::to_string(j) + "]");
    };
    if (corrected) {
        MatrixXd raw(n, 3 + K);
        raw << f.y, f.x, rf.zsyn, rf.p;
        MatrixXd g = f.projector->coefficients(raw);
        for (Index r = 0; r < 3 + K; ++r) sys.theta.segment(r * p, p) = g.col(r);
        addNames("gamma_Y", p);
        addNames("gamma_X", p);
        addNames("gamma_Z", p);
        for (Index k = 0; k < K; ++k) addNames("gamma_P" + std::to_string(k), p);
    }
    sys.theta.segment(offS, D.cols()) << slope.gammaW, slope.delta;
    sys.theta.segment(offC, E.cols()) << cm.gammaW, cm.delta;
    StackedResult st = stacked_vcov(rf, slope, cm);
    sys.theta.tail(4) = st.beta;
    addNames("theta_S", D.cols());
    addNames("theta_C", E.cols());
    for (const char* s : {"beta_ols", "beta_ols_c", "beta_ols_cl", "beta_iv"}) sys.names.push_back(s);
    for (int t = 0; t < 4; ++t) fs.targets.push_back(offB + t);

    MatrixXd raw(n, 3 + K);
    raw << f.y, f.x, rf.zsyn, rf.p;
    auto slopeCols = slope.columns;
    auto cmCols = cm.columns;

    struct State {
        VectorXd yt, xt, zt;
        MatrixXd pt;
        VectorXd b;
        MatrixXd alpha;
    };
    auto state_at = [=, &rf](const VectorXd& th) {
        State s;
        if (corrected) {
            MatrixXd res(n, 3 + K);
            for (Index r = 0; r < 3 + K; ++r) res.col(r) = raw.col(r) - W * th.segment(r * p, p);
            s.yt = res.col(0);
            s.xt = res.col(1);
            s.zt = res.col(2);
            s.pt = res.rightCols(K);
        } else {
            s.yt = rf.yt;
            s.xt = rf.xt;
            s.zt = rf.zt;
            s.pt = rf.pt;
        }
        s.b = VectorXd::Zero(n);
        for (std::size_t j = 0; j < slopeCols.size(); ++j)
            s.b += th(offS + p + static_cast<Index>(j)) * W.col(slopeCols[j].hetero);
        s.alpha = MatrixXd::Zero(n, K);
        for (std::size_t j = 0; j < cmCols.size(); ++j)
            s.alpha.col(cmCols[j].term) += th(offC + p + static_cast<Index>(j)) * W.col(cmCols[j].hetero);
        return s;
    };

    fs.momentsAt = [=, &f, &rf](const VectorXd& th) {
        State s = state_at(th);
        MatrixXd m = MatrixXd::Zero(n, q);
        if (corrected)
            for (Index r = 0; r < 3 + K; ++r) {
                VectorXd e = raw.col(r) - W * th.segment(r * p, p);
                m.middleCols(r * p, p) = (W.array().colwise() * (w.array() * e.array())).matrix();
            }
        VectorXd eS = f.y - D * th.segment(offS, D.cols());
        VectorXd eC = f.y - E * th.segment(offC, E.cols());
        m.middleCols(offS, D.cols()) = (D.array().colwise() * (w.array() * eS.array())).matrix();
        m.middleCols(offC, E.cols()) = (E.array().colwise() * (w.array() * eC.array())).matrix();
        const MatrixXd& P = did ? rf.p : s.pt;
        const VectorXd& xx = did ? f.x : s.xt;
        VectorXd S = (s.alpha.cwiseProduct(P)).rowwise().sum();
        m.col(offB) = w.cwiseProduct((s.yt - th(offB) * s.xt).cwiseProduct(s.xt));
        m.col(offB + 1) = w.cwiseProduct((s.b.array() - th(offB + 1)).matrix().cwiseProduct(xx).cwiseProduct(s.zt));
        m.col(offB + 2) = w.cwiseProduct((S - th(offB + 2) * xx).cwiseProduct(s.zt));
        const VectorXd& yy = did ? f.y : s.yt;
        m.col(offB + 3) = w.cwiseProduct((yy - th(offB + 3) * xx).cwiseProduct(s.zt));
        return m;
    };

    sys.moments = fs.momentsAt(sys.theta);

    // analytic Jacobian
    MatrixXd J = MatrixXd::Zero(q, q);
    MatrixXd WtwW = W.transpose() * w.asDiagonal() * W;
    for (Index r = 0; r < nR; ++r) J.block(r * p, r * p, p, p) = -WtwW;
    J.block(offS, offS, D.cols(), D.cols()) = -(D.transpose() * w.asDiagonal() * D);
    J.block(offC, offC, E.cols(), E.cols()) = -(E.transpose() * w.asDiagonal() * E);
    Inputs in = make_inputs(rf, &slope, &cm);
    for (int t = 0; t < 4; ++t) {
        Parts pt = target_parts(t, st.beta(t), in);
        const Index row = offB + t;
        J(row, row) = -w.dot(pt.den);
        if (corrected)
            for (const auto& term : pt.proj) J.block(row, term.block * p, 1, p) = -(W.transpose() * w.cwiseProduct(term.d)).transpose();
        if (pt.dB.size()) {
            MatrixXd d = w.cwiseProduct(pt.dB);
            J.block(row, offS + p, 1, slope.kept()) = slope.gradient(W, d).transpose();
        }
        if (pt.dAlpha.size()) {
            MatrixXd d = (pt.dAlpha.array().colwise() * w.array()).matrix();
            J.block(row, offC + p, 1, cm.kept()) = cm.gradient(W, d).transpose();
        }
    }
    sys.jacobian = J;
    return fs;
}

DwhResult dwh_test(const ResidualizedFrame& rf, const CondMeanFit& cm, SeRegime regime) {
    const auto& f = *rf.frame;
    const VectorXd& w = f.weights;
    Inputs in = make_inputs(rf, nullptr, &cm);
    Parts p = dwh_parts(in);
    DwhResult out;
    out.regime = regime;
    const double sw = rf.sw;
    const double den = rf.ivDenominator();
    if (!(std::abs(den) > tau_denom * sw))
        throw RelevanceError("instrument not relevant: IV denominator is zero", 0.0);
    out.reducedFormNumerator = w.dot(p.mu) / sw;
    const double Bp = den / sw;
    out.diff = out.reducedFormNumerator / Bp;

    const bool did = rf.mode == Mode::did_rd;
    VectorXd r = p.mu.cwiseQuotient(rf.zt.unaryExpr([](double z) { return z == 0.0 ? 1.0 : z; }));
    VectorXd ref = did ? f.y : rf.yt;
    double rmsR = std::sqrt(w.dot(r.cwiseProduct(r)) / sw), rmsY = std::sqrt(w.dot(ref.cwiseProduct(ref)) / sw);

    Influence inf = influence(p, in, nullptr, &cm);
    // influence() normalizes by sum w * den = sum w
    double vPlug = clustered_variance(inf.plugin, f.clusters);
    double vCorr = clustered_variance(inf.corrected, f.clusters);
    double sePlug = std::sqrt(std::max(0.0, vPlug)), seCorr = std::sqrt(std::max(0.0, vCorr));
    out.degenerate = rmsR <= 1e-12 * rmsY || (regime == SeRegime::plugin ? sePlug : seCorr) == 0.0;
    auto stat = [&](double se) { return se > 0 ? out.reducedFormNumerator * (Bp > 0 ? 1.0 : -1.0) / se : 0.0; };
    out.statisticPlugin = out.degenerate ? 0.0 : stat(sePlug);
    out.statisticCorrected = out.degenerate ? 0.0 : stat(seCorr);
    out.seNumerator = regime == SeRegime::plugin ? sePlug : seCorr;
    out.seDiff = out.seNumerator / std::abs(Bp);
    out.statistic = regime == SeRegime::plugin ? out.statisticPlugin : out.statisticCorrected;
    out.pValue = out.degenerate ? 1.0 : normal_two_sided_p(out.statistic);
    return out;
}

json DwhResult::to_json() const {
    return json{{"statistic", statistic},
                {"p_value", pValue},
                {"diff", diff},
                {"se_diff", seDiff},
                {"reduced_form_numerator", reducedFormNumerator},
                {"se_numerator", seNumerator},
                {"statistic_plugin", statisticPlugin},
                {"statistic_corrected", statisticCorrected},
                {"degenerate", degenerate},
                {"se_regime", to_string(regime)}};
}

GapSes gap_component_ses(const Eigen::Matrix4d& V) {
    double tol = 1e-10 * std::max(V.trace(), 0.0);
    auto se = [&](int a, int b) {
        double v = V(a, a) + V(b, b) - 2.0 * V(a, b);
        if (v < -tol) throw NumericalError("joint covariance is not positive semidefinite");
        return std::sqrt(std::max(0.0, v));
    };
    for (int i = 0; i < 4; ++i)
        if (V(i, i) < -tol) throw NumericalError("joint covariance has a negative variance");
    GapSes g;
    g.covariate = se(1, 0);
    g.treatmentLevel = se(2, 1);
    g.marginalEffect = se(3, 2);
    g.total = se(3, 0);
    return g;
}

}  // namespace ivgap
