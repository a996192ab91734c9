#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/basis.hpp"
#include "ivgap/data.hpp"

namespace ivgap {

// one interacted regressor W(:,hetero) * p_term(X)
struct ExtraColumn {
    int term = 0;
    int hetero = 0;
};

// weighted least squares of Y on [W, {H_k * p_k(X)}]
struct StageFit {
    BasisSpec basis;
    std::vector<ExtraColumn> columns;   // kept columns in fit order
    std::vector<std::string> names;
    std::vector<std::string> pruned;
    Eigen::VectorXd gammaW;
    Eigen::VectorXd delta;
    Eigen::MatrixXd R;                  // sqrt(w) C~ = Q R over kept columns
    Eigen::VectorXd residuals;
    double rss = 0.0;
    Eigen::MatrixXd alpha;              // K x p, alpha_k(w) = w' alpha.row(k)

    Eigen::Index kept() const { return static_cast<Eigen::Index>(columns.size()); }
    // C v for v over kept columns
    Eigen::VectorXd extrasTimes(const Eigen::MatrixXd& W, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
    // F_j = sum_i dmu(i, term_j) W(i, hetero_j)
    Eigen::VectorXd gradient(const Eigen::MatrixXd& W, const Eigen::MatrixXd& dmu) const;
    Eigen::MatrixXd build(const Eigen::MatrixXd& W, const Eigen::VectorXd& x) const;
    Eigen::VectorXd alphaAt(int k, const Eigen::MatrixXd& W) const;
    double g(double x, const Eigen::RowVectorXd& w) const;
    Eigen::VectorXd fitted(const Eigen::MatrixXd& W, const Eigen::VectorXd& x) const;
};

struct SlopeFit : StageFit {
    std::vector<int> hetero;
    Eigen::VectorXd gammaB() const;   // over `hetero`
    double b(const Eigen::RowVectorXd& w) const { return (w * alpha.row(0).transpose())(0); }
    Eigen::VectorXd bAll(const Eigen::MatrixXd& W) const { return alphaAt(0, W); }
    nlohmann::json to_json(const std::vector<std::string>& wNames) const;
};

struct CondMeanFit : StageFit {
    nlohmann::json to_json(const std::vector<std::string>& wNames) const;
};

std::vector<int> parse_hetero(const nlohmann::json& spec, const std::vector<std::string>& wNames);

std::vector<double> treatment_support(const ModelFrame& frame);
double weighted_median(const Eigen::VectorXd& x, const Eigen::VectorXd& w);

BasisSpec default_basis(const ModelFrame& frame);
BasisSpec basis_from_config(const ModelFrame& frame, const nlohmann::json& cfg);
BasisSpec linear_basis(const ModelFrame& frame, const std::vector<int>& hetero);

SlopeFit fit_slope_model(const ModelFrame& frame, const std::vector<int>& hetero);
CondMeanFit fit_condmean_model(const ModelFrame& frame, const BasisSpec& basis);

double predict_marginal(const CondMeanFit& fit, double x, const Eigen::RowVectorXd& w);

}  // namespace ivgap
