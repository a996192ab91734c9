#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "ivgap/basis.hpp"
#include "ivgap/common.hpp"

namespace ivgap {

struct ModelFrame;

struct ProjectionResult {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd fitted;
    Eigen::VectorXd residuals;
};

// L(.|W) under row weights, factorized once
class WeightedProjector {
public:
    WeightedProjector(Eigen::MatrixXd W, Eigen::VectorXd weights, std::vector<std::string> names);

    const Eigen::MatrixXd& design() const { return W_; }
    const Eigen::VectorXd& weights() const { return w_; }
    const Eigen::VectorXd& sqrtWeights() const { return sqrtw_; }
    const std::vector<std::string>& names() const { return names_; }
    Eigen::Index p() const { return W_.cols(); }
    Eigen::Index n() const { return W_.rows(); }

    Eigen::VectorXd coefficients(const Eigen::VectorXd& r) const;
    Eigen::MatrixXd coefficients(const Eigen::MatrixXd& R) const;
    ProjectionResult project(const Eigen::VectorXd& r) const;
    Eigen::VectorXd residualize(const Eigen::VectorXd& r) const;
    Eigen::MatrixXd residualize(const Eigen::MatrixXd& R) const;
    // column blocks are processed in chunks to bound scratch memory
    void residualize_inplace(Eigen::Ref<Eigen::MatrixXd> M) const;

private:
    void solve_block(Eigen::Ref<Eigen::MatrixXd> rhsScaled, Eigen::Ref<Eigen::MatrixXd> coef) const;
    Eigen::MatrixXd W_;
    Eigen::VectorXd w_, sqrtw_;
    std::vector<std::string> names_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

ProjectionResult wls_project(const Eigen::VectorXd& R, const Eigen::MatrixXd& W, const Eigen::VectorXd& weights);

// ordered dependence test: column j is dependent when its residual on columns 0..j-1
// is below tau_rank times `norms[j]`; M is consumed (already row-scaled)
std::vector<int> ordered_dependent_columns(Eigen::MatrixXd M, const Eigen::VectorXd& norms);

// largest |sum_i w_i W_ij r_i| relative to the invariant's scale
double orthogonality_ratio(const Eigen::MatrixXd& W, const Eigen::VectorXd& w, const Eigen::VectorXd& r);

// least squares of y on [W, C] by FWL; C columns come from `build` on demand
struct ExtrasFit {
    std::vector<int> kept;
    std::vector<int> dropped;
    Eigen::VectorXd coef;   // on kept columns
    Eigen::MatrixXd R;      // upper triangular factor of sqrt(w) C~ (kept)
};

using ColumnBuilder = std::function<Eigen::MatrixXd(const std::vector<int>&)>;

ExtrasFit fit_extras(const WeightedProjector& proj, const ColumnBuilder& build, int k,
                     const Eigen::VectorXd& ytilde, bool allowDrop,
                     const std::vector<std::string>& names, const std::string& context);

struct ResidualizedFrame {
    const ModelFrame* frame = nullptr;
    Mode mode = Mode::standard;
    Eigen::VectorXd yt, xt;
    Eigen::VectorXd zsyn, zt;   // synthetic scalar instrument and its residual
    Eigen::VectorXd pi;         // first-stage instrument coefficients
    BasisSpec basis;
    Eigen::MatrixXd p, pt;      // raw and residualized basis columns
    double sw = 0.0;

    // sum w x z~ in did-rd mode, sum w x~ z~ otherwise
    double ivDenominator() const;
};

ResidualizedFrame residualize_frame(const ModelFrame& frame, const BasisSpec& basis);
// no basis columns
ResidualizedFrame residualize_frame(const ModelFrame& frame);

}  // namespace ivgap
