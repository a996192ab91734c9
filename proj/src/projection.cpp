#include "ivgap/projection.hpp"

#include <algorithm>
#include <numeric>

#include "ivgap/data.hpp"
#include "ivgap/estimators.hpp"

namespace ivgap {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr Index kChunk = 16;

VectorXd weighted_norms(const MatrixXd& M, const VectorXd& sqrtw) {
    VectorXd out(M.cols());
    for (Index j = 0; j < M.cols(); ++j) out(j) = M.col(j).cwiseProduct(sqrtw).norm();
    return out;
}
}  // namespace

std::vector<int> ordered_dependent_columns(MatrixXd M, const VectorXd& norms) {
    // reorthogonalized Gram-Schmidt in declared order; the basis overwrites M's leading columns
    std::vector<int> dep;
    Index r = 0;
    for (Index j = 0; j < M.cols(); ++j) {
        VectorXd v = M.col(j);
        for (int pass = 0; pass < 2 && r > 0; ++pass) v -= M.leftCols(r) * (M.leftCols(r).transpose() * v);
        double nv = v.norm();
        if (!(norms(j) > 0) || nv <= tau_rank * norms(j)) {
            dep.push_back(static_cast<int>(j));
            continue;
        }
        M.col(r++) = v / nv;
    }
    return dep;
}

WeightedProjector::WeightedProjector(MatrixXd W, VectorXd weights, std::vector<std::string> names)
    : W_(std::move(W)), w_(std::move(weights)), names_(std::move(names)) {
    if (w_.size() != W_.rows()) throw UserError("projector: weight length does not match rows");
    if (names_.size() != static_cast<std::size_t>(W_.cols())) {
        names_.clear();
        for (Index j = 0; j < W_.cols(); ++j) names_.push_back("c" + std::to_string(j));
    }
    sqrtw_ = w_.cwiseSqrt();
    VectorXd norms = weighted_norms(W_, sqrtw_);
    qr_.compute(sqrtw_.asDiagonal() * W_);
    const auto& R = qr_.matrixQR();
    const auto& perm = qr_.colsPermutation().indices();
    bool ok = W_.rows() >= W_.cols();
    for (Index j = 0; ok && j < W_.cols(); ++j) {
        double nj = norms(perm(j));
        ok = nj > 0 && std::abs(R(j, j)) >= tau_rank * nj;
    }
    if (!ok) {
        auto dep = ordered_dependent_columns(sqrtw_.asDiagonal() * W_, norms);
        if (dep.empty()) dep.push_back(static_cast<int>(W_.cols()) - 1);
        std::vector<std::string> cols;
        for (int c : dep) cols.push_back(names_[static_cast<std::size_t>(c)]);
        throw RankError("covariate design W is rank deficient under the row weights; dependent columns: " +
                            join(cols, ", "),
                        cols);
    }
}

void WeightedProjector::solve_block(Eigen::Ref<MatrixXd> rhsScaled, Eigen::Ref<MatrixXd> coef) const {
    const Index p = W_.cols();
    rhsScaled.applyOnTheLeft(qr_.householderQ().adjoint());
    MatrixXd y = qr_.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>().solve(rhsScaled.topRows(p));
    coef = qr_.colsPermutation() * y;
}

VectorXd WeightedProjector::coefficients(const VectorXd& r) const {
    MatrixXd rhs = r.cwiseProduct(sqrtw_);
    MatrixXd c(W_.cols(), 1);
    solve_block(rhs, c);
    return c.col(0);
}

MatrixXd WeightedProjector::coefficients(const MatrixXd& R) const {
    MatrixXd c(W_.cols(), R.cols());
    for (Index s = 0; s < R.cols(); s += kChunk) {
        Index k = std::min(kChunk, R.cols() - s);
        MatrixXd rhs = sqrtw_.asDiagonal() * R.middleCols(s, k);
        MatrixXd cc(W_.cols(), k);
        solve_block(rhs, cc);
        c.middleCols(s, k) = cc;
    }
    return c;
}

ProjectionResult WeightedProjector::project(const VectorXd& r) const {
    ProjectionResult out;
    out.coefficients = coefficients(r);
    out.fitted = W_ * out.coefficients;
    out.residuals = r - out.fitted;
    return out;
}

VectorXd WeightedProjector::residualize(const VectorXd& r) const { return r - W_ * coefficients(r); }

MatrixXd WeightedProjector::residualize(const MatrixXd& R) const {
    MatrixXd out = R;
    residualize_inplace(out);
    return out;
}

void WeightedProjector::residualize_inplace(Eigen::Ref<MatrixXd> M) const {
    for (Index s = 0; s < M.cols(); s += kChunk) {
        Index k = std::min(kChunk, M.cols() - s);
        MatrixXd rhs = sqrtw_.asDiagonal() * M.middleCols(s, k);
        MatrixXd cc(W_.cols(), k);
        solve_block(rhs, cc);
        M.middleCols(s, k).noalias() -= W_ * cc;
    }
}

ProjectionResult wls_project(const VectorXd& R, const MatrixXd& W, const VectorXd& weights) {
    WeightedProjector proj(W, weights, {});
    return proj.project(R);
}

double orthogonality_ratio(const MatrixXd& W, const VectorXd& w, const VectorXd& r) {
    double rmax = r.cwiseAbs().maxCoeff();
    if (rmax == 0) return 0.0;
    double sw = w.sum(), worst = 0.0;
    for (Index j = 0; j < W.cols(); ++j) {
        double scale = sw * W.col(j).cwiseAbs().maxCoeff() * rmax;
        if (scale == 0) continue;
        double v = std::abs((w.array() * W.col(j).array() * r.array()).sum());
        worst = std::max(worst, v / scale);
    }
    return worst;
}

ExtrasFit fit_extras(const WeightedProjector& proj, const ColumnBuilder& build, int k, const VectorXd& ytilde,
                     bool allowDrop, const std::vector<std::string>& names, const std::string& context) {
    ExtrasFit out;
    std::vector<int> all(static_cast<std::size_t>(k));
    std::iota(all.begin(), all.end(), 0);
    out.kept = all;
    if (k == 0) {
        out.coef.resize(0);
        out.R.resize(0, 0);
        return out;
    }
    const VectorXd& sqrtw = proj.sqrtWeights();
    const auto kk = static_cast<Index>(k);
    MatrixXd C = build(all);
    VectorXd norms = weighted_norms(C, sqrtw);
    proj.residualize_inplace(C);
    C.array().colwise() *= sqrtw.array();
    std::vector<int> dep;
    VectorXd b = ytilde.cwiseProduct(sqrtw);
    MatrixXd R;
    VectorXd qb;
    if (C.rows() > kk) {
        // unpivoted Householder: |R_jj| is the part of column j orthogonal to the columns before it
        Eigen::HouseholderQR<Eigen::Ref<MatrixXd>> qr(C);
        const auto& QR = qr.matrixQR();
        for (Index j = 0; j < kk; ++j)
            if (!(norms(j) > 0) || !(std::abs(QR(j, j)) >= tau_rank * norms(j))) dep.push_back(static_cast<int>(j));
        b.applyOnTheLeft(qr.householderQ().adjoint());
        R = QR.topLeftCorner(kk, kk).triangularView<Eigen::Upper>();
        qb = b.head(kk);
    } else {
        // short design: later columns may still be independent of the earlier dependent ones
        dep = ordered_dependent_columns(C, norms);
        if (dep.empty()) dep.push_back(k - 1);
    }

    if (!dep.empty()) {
        std::vector<std::string> depNames;
        for (int d : dep) depNames.push_back(names[static_cast<std::size_t>(d)]);
        if (!allowDrop)
            throw RankError(context + ": design is rank deficient; dependent columns: " + join(depNames, ", "), depNames);
        out.kept.clear();
        out.dropped = dep;
        for (int j = 0; j < k; ++j)
            if (std::find(dep.begin(), dep.end(), j) == dep.end()) out.kept.push_back(j);
        if (out.kept.empty()) {
            out.coef.resize(0);
            out.R.resize(0, 0);
            return out;
        }
        const auto m = static_cast<Index>(out.kept.size());
        MatrixXd Rk(R.size() > 0 ? kk : C.rows(), m);
        if (R.size() > 0) {
            // C_keep = Q R(:, keep); refactor the small block
            for (Index j = 0; j < m; ++j) Rk.col(j) = R.col(out.kept[static_cast<std::size_t>(j)]);
        } else {
            if (C.rows() <= m) throw RankError(context + ": more columns than rows after dropping dependent columns", {});
            for (Index j = 0; j < m; ++j) Rk.col(j) = C.col(out.kept[static_cast<std::size_t>(j)]);
            qb = b;
        }
        Eigen::HouseholderQR<MatrixXd> small(Rk);
        qb.applyOnTheLeft(small.householderQ().adjoint());
        R = small.matrixQR().topLeftCorner(m, m).triangularView<Eigen::Upper>();
        for (Index j = 0; j < m; ++j)
            if (!(std::abs(R(j, j)) >= tau_rank * norms(out.kept[static_cast<std::size_t>(j)])))
                throw RankError(context + ": could not obtain a full-rank design", {});
        qb = qb.head(m).eval();
    }
    out.R = std::move(R);
    out.coef = out.R.triangularView<Eigen::Upper>().solve(qb);
    return out;
}

double ResidualizedFrame::ivDenominator() const {
    const VectorXd& w = frame->weights;
    if (mode == Mode::did_rd) return (w.array() * frame->x.array() * zt.array()).sum();
    return (w.array() * xt.array() * zt.array()).sum();
}

ResidualizedFrame residualize_frame(const ModelFrame& frame) { return residualize_frame(frame, BasisSpec{}); }

ResidualizedFrame residualize_frame(const ModelFrame& frame, const BasisSpec& basis) {
    const auto& proj = *frame.projector;
    ResidualizedFrame rf;
    rf.frame = &frame;
    rf.mode = frame.mode;
    rf.sw = frame.weights.sum();
    rf.yt = proj.residualize(frame.y);
    rf.xt = proj.residualize(frame.x);
    FirstStageFit fs = first_stage_fit(frame);
    rf.zsyn = std::move(fs.synthetic);
    rf.pi = fs.pi;
    rf.zt = proj.residualize(rf.zsyn);
    rf.basis = basis;
    rf.p = basis.evaluate(frame.x);
    rf.pt = rf.p;
    proj.residualize_inplace(rf.pt);
    return rf;
}

}  // namespace ivgap
