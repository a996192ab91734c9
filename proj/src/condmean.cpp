#include "ivgap/condmean.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ivgap/projection.hpp"

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

std::string BasisTerm::name() const {
    switch (kind) {
        case BasisKind::constant: return "1";
        case BasisKind::linear: return "X";
        case BasisKind::hinge: return "max(X-" + format_number(knot) + ",0)";
        case BasisKind::step: return "1{X>=" + format_number(knot) + "}";
    }
    return "?";
}

MatrixXd BasisSpec::evaluate(const VectorXd& x) const {
    MatrixXd P(x.size(), static_cast<Index>(terms.size()));
    for (std::size_t k = 0; k < terms.size(); ++k)
        for (Index i = 0; i < x.size(); ++i) P(i, static_cast<Index>(k)) = terms[k].eval(x(i));
    return P;
}

void BasisSpec::validate() const {
    if (support.empty()) return;
    for (const auto& t : terms) {
        if (t.hetero.empty() || t.hetero.front() != 0)
            throw UserError("basis heterogeneity designs must include the intercept");
        if (t.kind == BasisKind::step) {
            bool inSupport = std::binary_search(support.begin(), support.end(), t.knot);
            if (!inSupport || !(t.knot > support.front()))
                throw UserError("step threshold " + format_number(t.knot) +
                                " is not a treatment support level above the minimum");
        }
    }
}

json BasisSpec::to_json(const std::vector<std::string>& wNames) const {
    json j = json::array();
    for (const auto& t : terms) {
        json h = json::array();
        for (int c : t.hetero) h.push_back(wNames.at(static_cast<std::size_t>(c)));
        j.push_back({{"term", t.name()}, {"heterogeneity", h}});
    }
    return j;
}

// ---- stage fit ----

MatrixXd StageFit::build(const MatrixXd& W, const VectorXd& x) const {
    MatrixXd C(W.rows(), kept());
    for (Index j = 0; j < kept(); ++j) {
        const auto& c = columns[static_cast<std::size_t>(j)];
        const auto& t = basis.terms[static_cast<std::size_t>(c.term)];
        for (Index i = 0; i < W.rows(); ++i) C(i, j) = W(i, c.hetero) * t.eval(x(i));
    }
    return C;
}

VectorXd StageFit::extrasTimes(const MatrixXd& W, const VectorXd& x, const VectorXd& v) const {
    // group by basis term: sum_k p_k(x) * (W * a_k)
    const auto K = static_cast<Index>(basis.terms.size());
    MatrixXd A = MatrixXd::Zero(W.cols(), K);
    for (Index j = 0; j < kept(); ++j) {
        const auto& c = columns[static_cast<std::size_t>(j)];
        A(c.hetero, c.term) += v(j);
    }
    VectorXd out = VectorXd::Zero(W.rows());
    for (Index k = 0; k < K; ++k) {
        if (A.col(k).isZero(0)) continue;
        VectorXd a = W * A.col(k);
        const auto& t = basis.terms[static_cast<std::size_t>(k)];
        for (Index i = 0; i < W.rows(); ++i) out(i) += a(i) * t.eval(x(i));
    }
    return out;
}

VectorXd StageFit::gradient(const MatrixXd& W, const MatrixXd& dmu) const {
    // G(h, k) = sum_i W(i,h) dmu(i,k)
    MatrixXd G = W.transpose() * dmu;
    VectorXd F(kept());
    for (Index j = 0; j < kept(); ++j) {
        const auto& c = columns[static_cast<std::size_t>(j)];
        F(j) = G(c.hetero, c.term);
    }
    return F;
}

VectorXd StageFit::alphaAt(int k, const MatrixXd& W) const { return W * alpha.row(k).transpose(); }

double StageFit::g(double x, const Eigen::RowVectorXd& w) const {
    double v = w.dot(gammaW);
    for (std::size_t k = 0; k < basis.terms.size(); ++k)
        v += w.dot(alpha.row(static_cast<Index>(k))) * basis.terms[k].eval(x);
    return v;
}

VectorXd StageFit::fitted(const MatrixXd& W, const VectorXd& x) const {
    return W * gammaW + extrasTimes(W, x, delta);
}

namespace {

void fit_stage(StageFit& fit, const ModelFrame& frame, const std::vector<ExtraColumn>& cand, bool allowDrop,
               const std::vector<std::string>& candNames, const std::string& context) {
    const auto& proj = *frame.projector;
    const MatrixXd& W = frame.W();
    const VectorXd& x = frame.x;
    auto build = [&](const std::vector<int>& cols) {
        MatrixXd C(W.rows(), static_cast<Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const auto& c = cand[static_cast<std::size_t>(cols[j])];
            const auto& t = fit.basis.terms[static_cast<std::size_t>(c.term)];
            for (Index i = 0; i < W.rows(); ++i) C(i, static_cast<Index>(j)) = W(i, c.hetero) * t.eval(x(i));
        }
        return C;
    };
    VectorXd yt = proj.residualize(frame.y);
    ExtrasFit ef = fit_extras(proj, build, static_cast<int>(cand.size()), yt, allowDrop, candNames, context);
    fit.columns.clear();
    fit.names.clear();
    for (int k : ef.kept) {
        fit.columns.push_back(cand[static_cast<std::size_t>(k)]);
        fit.names.push_back(candNames[static_cast<std::size_t>(k)]);
    }
    for (int k : ef.dropped) fit.pruned.push_back(candNames[static_cast<std::size_t>(k)]);
    fit.delta = ef.coef;
    fit.R = ef.R;
    VectorXd cd = fit.extrasTimes(W, x, fit.delta);
    fit.gammaW = proj.coefficients(VectorXd(frame.y - cd));
    fit.residuals = frame.y - W * fit.gammaW - cd;
    fit.rss = (frame.weights.array() * fit.residuals.array().square()).sum();
    fit.alpha = MatrixXd::Zero(static_cast<Index>(fit.basis.terms.size()), W.cols());
    for (Index j = 0; j < fit.kept(); ++j) {
        const auto& c = fit.columns[static_cast<std::size_t>(j)];
        fit.alpha(c.term, c.hetero) += fit.delta(j);
    }
}

std::string column_name(const std::string& wname, const BasisTerm& t, const std::string& xname) {
    std::string b = t.name();
    if (t.kind == BasisKind::linear) b = xname;
    else {
        auto pos = b.find('X');
        if (pos != std::string::npos) b.replace(pos, 1, xname);
    }
    return wname == "(intercept)" ? b : wname + "*" + b;
}

}  // namespace

std::vector<int> parse_hetero(const json& spec, const std::vector<std::string>& wNames) {
    std::set<int> cols{0};
    if (spec.is_null()) return {0};
    if (spec.is_string()) {
        auto s = spec.get<std::string>();
        if (s == "full") {
            std::vector<int> all(wNames.size());
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        if (s == "none" || s == "constant" || s == "homogeneous") return {0};
        throw UserError("unknown heterogeneity design '" + s + "' (expected full, none, or a column list)");
    }
    if (!spec.is_array()) throw UserError("heterogeneity design must be a string or a list of columns");
    for (const auto& e : spec) {
        auto name = e.get<std::string>();
        bool found = false;
        for (std::size_t j = 0; j < wNames.size(); ++j) {
            const auto& wn = wNames[j];
            // a source column name selects all of its expanded columns
            if (wn == name || wn.rfind(name + "[", 0) == 0) {
                cols.insert(static_cast<int>(j));
                found = true;
            }
        }
        if (!found) throw UserError("heterogeneity column '" + name + "' is not a column of W");
    }
    return {cols.begin(), cols.end()};
}

std::vector<double> treatment_support(const ModelFrame& frame) {
    std::vector<double> s;
    for (Index i = 0; i < frame.x.size(); ++i)
        if (frame.weights(i) > 0) s.push_back(frame.x(i));
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

double weighted_median(const VectorXd& x, const VectorXd& w) {
    std::vector<Index> idx;
    for (Index i = 0; i < x.size(); ++i)
        if (w(i) > 0) idx.push_back(i);
    if (idx.empty()) throw NumericalError("weighted median of an empty sample");
    std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return x(a) < x(b); });
    double total = 0.0;
    for (auto i : idx) total += w(i);
    double cum = 0.0;
    for (auto i : idx) {
        cum += w(i);
        if (cum >= 0.5 * total) return x(i);
    }
    return x(idx.back());
}

namespace {

std::vector<double> weighted_quantile_levels(const ModelFrame& frame, int k) {
    std::vector<Index> idx;
    for (Index i = 0; i < frame.x.size(); ++i)
        if (frame.weights(i) > 0) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return frame.x(a) < frame.x(b); });
    double total = 0.0;
    for (auto i : idx) total += frame.weights(i);
    std::vector<double> out;
    double cum = 0.0;
    std::size_t pos = 0;
    for (int q = 1; q < k; ++q) {
        double target = total * q / k;
        while (pos < idx.size() && cum + frame.weights(idx[pos]) < target) cum += frame.weights(idx[pos++]);
        if (pos < idx.size()) out.push_back(frame.x(idx[pos]));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

BasisSpec linear_basis(const ModelFrame& frame, const std::vector<int>& hetero) {
    BasisSpec b;
    b.support = treatment_support(frame);
    b.terms.push_back(BasisTerm{BasisKind::linear, 0.0, hetero});
    return b;
}

BasisSpec default_basis(const ModelFrame& frame) { return basis_from_config(frame, json::object()); }

BasisSpec basis_from_config(const ModelFrame& frame, const json& cfg) {
    BasisSpec b;
    b.support = treatment_support(frame);
    if (b.support.size() < 2) throw NumericalError("treatment takes a single value on the weighted sample");
    const double lo = b.support.front(), hi = b.support.back();
    auto het = [&](const json& spec, const char* fallback) {
        return parse_hetero(spec.is_null() ? json(fallback) : spec, frame.wNames);
    };
    auto steps_at = [&](const std::vector<double>& lv, const std::vector<int>& h) {
        for (double v : lv)
            if (v > lo) b.terms.push_back(BasisTerm{BasisKind::step, v, h});
    };
    auto default_levels = [&](const json& quant) {
        if (quant.is_number_integer()) return weighted_quantile_levels(frame, quant.get<int>());
        if (b.support.size() > 50) return weighted_quantile_levels(frame, 50);
        return b.support;
    };
    if (!cfg.is_object()) throw UserError("basis configuration must be an object");

    if (cfg.contains("terms")) {
        for (const auto& t : cfg.at("terms")) {
            std::string kind = t.at("kind").get<std::string>();
            auto h = het(t.contains("heterogeneity") ? t.at("heterogeneity") : json(nullptr),
                         kind == "step" ? "none" : "full");
            if (kind == "constant") continue;  // absorbed by W
            if (kind == "linear") b.terms.push_back(BasisTerm{BasisKind::linear, 0.0, h});
            else if (kind == "hinge") {
                auto k = t.at("knot");
                double knot = k.is_string() && k.get<std::string>() == "median" ? weighted_median(frame.x, frame.weights)
                                                                                : k.get<double>();
                b.terms.push_back(BasisTerm{BasisKind::hinge, knot, h});
            } else if (kind == "step") {
                auto lv = t.contains("levels") ? t.at("levels") : json("all");
                if (lv.is_string() && lv.get<std::string>() == "all")
                    steps_at(default_levels(t.contains("quantiles") ? t.at("quantiles") : json(nullptr)), h);
                else
                    for (double v : lv.get<std::vector<double>>()) b.terms.push_back(BasisTerm{BasisKind::step, v, h});
            } else {
                throw UserError("unknown basis term kind '" + kind + "'");
            }
        }
        if (std::none_of(b.terms.begin(), b.terms.end(), [](const BasisTerm& t) { return t.kind == BasisKind::linear; }))
            throw UserError("basis must contain a linear term");
        b.validate();
        return b;
    }

    auto h = het(cfg.contains("heterogeneity") ? cfg.at("heterogeneity") : json(nullptr), "full");
    b.terms.push_back(BasisTerm{BasisKind::linear, 0.0, h});
    json hinge = cfg.contains("hinge") ? cfg.at("hinge") : json("median");
    if (!(hinge.is_string() && hinge.get<std::string>() == "none") && !hinge.is_null()) {
        double knot = hinge.is_string() ? weighted_median(frame.x, frame.weights) : hinge.get<double>();
        if (knot > lo && knot < hi) b.terms.push_back(BasisTerm{BasisKind::hinge, knot, h});
    }
    json steps = cfg.contains("steps") ? cfg.at("steps") : json("all");
    auto sh = het(cfg.contains("step_heterogeneity") ? cfg.at("step_heterogeneity") : json(nullptr), "none");
    if (steps.is_string()) {
        auto s = steps.get<std::string>();
        if (s == "all") steps_at(default_levels(cfg.contains("step_quantiles") ? cfg.at("step_quantiles") : json(nullptr)), sh);
        else if (s != "none") throw UserError("basis.steps must be 'all', 'none', or a list of levels");
    } else {
        for (double v : steps.get<std::vector<double>>()) b.terms.push_back(BasisTerm{BasisKind::step, v, sh});
    }
    b.validate();
    return b;
}

SlopeFit fit_slope_model(const ModelFrame& frame, const std::vector<int>& hetero) {
    SlopeFit fit;
    fit.hetero = hetero;
    fit.basis.support = treatment_support(frame);
    fit.basis.terms.push_back(BasisTerm{BasisKind::linear, 0.0, hetero});
    std::vector<ExtraColumn> cand;
    std::vector<std::string> names;
    for (int h : hetero) {
        if (h < 0 || h >= static_cast<int>(frame.wNames.size())) throw UserError("slope heterogeneity column out of range");
        cand.push_back(ExtraColumn{0, h});
        names.push_back(column_name(frame.wNames[static_cast<std::size_t>(h)], fit.basis.terms[0], frame.treatmentName));
    }
    fit_stage(fit, frame, cand, false, names, "slope model");
    return fit;
}

VectorXd SlopeFit::gammaB() const {
    VectorXd g(static_cast<Index>(hetero.size()));
    for (std::size_t j = 0; j < hetero.size(); ++j) g(static_cast<Index>(j)) = alpha(0, hetero[j]);
    return g;
}

json SlopeFit::to_json(const std::vector<std::string>& wNames) const {
    json j;
    j["heterogeneity"] = json::array();
    for (int h : hetero) j["heterogeneity"].push_back(wNames.at(static_cast<std::size_t>(h)));
    j["gamma_b"] = std::vector<double>(gammaB().data(), gammaB().data() + gammaB().size());
    j["gamma_a"] = std::vector<double>(gammaW.data(), gammaW.data() + gammaW.size());
    return j;
}

CondMeanFit fit_condmean_model(const ModelFrame& frame, const BasisSpec& basisIn) {
    CondMeanFit fit;
    fit.basis = basisIn;
    fit.basis.validate();
    std::vector<ExtraColumn> cand;
    std::vector<std::string> names;
    auto add = [&](int k, int h) {
        cand.push_back(ExtraColumn{k, h});
        names.push_back(column_name(frame.wNames.at(static_cast<std::size_t>(h)), fit.basis.terms[static_cast<std::size_t>(k)],
                                    frame.treatmentName));
    };
    const auto K = static_cast<int>(fit.basis.terms.size());
    auto isStep = [&](int k) { return fit.basis.terms[static_cast<std::size_t>(k)].kind == BasisKind::step; };
    auto isConst = [&](int k) { return fit.basis.terms[static_cast<std::size_t>(k)].kind == BasisKind::constant; };
    for (int k = 0; k < K; ++k)
        if (isStep(k))
            for (int h : fit.basis.terms[static_cast<std::size_t>(k)].hetero)
                if (h == 0) add(k, h);
    for (int k = 0; k < K; ++k)
        if (isStep(k))
            for (int h : fit.basis.terms[static_cast<std::size_t>(k)].hetero)
                if (h != 0) add(k, h);
    for (int k = 0; k < K; ++k)
        if (!isStep(k) && !isConst(k))
            for (int h : fit.basis.terms[static_cast<std::size_t>(k)].hetero) add(k, h);
    fit_stage(fit, frame, cand, true, names, "conditional-mean model");
    return fit;
}

json CondMeanFit::to_json(const std::vector<std::string>& wNames) const {
    json j;
    j["basis"] = basis.to_json(wNames);
    j["columns"] = names;
    j["coefficients"] = std::vector<double>(delta.data(), delta.data() + delta.size());
    j["pruned"] = pruned;
    return j;
}

double predict_marginal(const CondMeanFit& fit, double x, const Eigen::RowVectorXd& w) {
    const auto& s = fit.basis.support;
    if (s.size() < 2 || !(x > s.front()) || x > s.back())
        throw UserError("predict_marginal: x = " + format_number(x) + " outside (min, max] of the treatment support");
    auto it = std::lower_bound(s.begin(), s.end(), x);
    double prev = *(it - 1);
    double delta = x - prev;
    return (fit.g(x, w) - fit.g(prev, w)) / delta;
}

}  // namespace ivgap
