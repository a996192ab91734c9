#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/condmean.hpp"
#include "ivgap/data.hpp"
#include "ivgap/projection.hpp"

namespace ivgap {

enum class SeRegime { plugin, corrected };

std::string to_string(SeRegime r);
SeRegime parse_se_regime(std::string_view s);
SeRegime default_regime(Mode m);

double cluster_factor(int clusters);
// factor * sum_g s_g s_g' with s_g the within-cluster column sums of psi
Eigen::MatrixXd clustered_meat(const Eigen::MatrixXd& psi, const ClusterIndex& c);
double clustered_variance(const Eigen::VectorXd& psi, const ClusterIndex& c);

// target order: beta_ols, beta_ols_c, beta_ols_cl, beta_iv
struct StackedResult {
    Eigen::Vector4d beta;
    Eigen::Vector4d denominators;
    Eigen::Matrix4d vcovPlugin;
    Eigen::Matrix4d vcovCorrected;
    Eigen::MatrixXd psiPlugin;      // n x 4 influence terms
    Eigen::MatrixXd psiCorrected;

    const Eigen::Matrix4d& vcov(SeRegime r) const { return r == SeRegime::plugin ? vcovPlugin : vcovCorrected; }
};

StackedResult stacked_vcov(const ResidualizedFrame& rf, const SlopeFit& slope, const CondMeanFit& cm);

// fully materialized stacked system; O(n q) memory, for checking and small problems
struct GmmSystem {
    Eigen::VectorXd theta;
    std::vector<std::string> names;
    Eigen::MatrixXd moments;   // n x q
    Eigen::MatrixXd jacobian;  // q x q, sum over rows of dm/dtheta
    ClusterIndex clusters;

    Eigen::Index q() const { return theta.size(); }
    Eigen::MatrixXd meat() const { return clustered_meat(moments, clusters); }
    Eigen::MatrixXd vcov() const;
};

struct FullSystem {
    GmmSystem system;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> momentsAt;
    std::vector<Eigen::Index> targets;  // positions of the four betas in theta
};

FullSystem build_full_system(const ResidualizedFrame& rf, const SlopeFit& slope, const CondMeanFit& cm,
                             SeRegime regime);

struct DwhResult {
    double statistic = 0.0;
    double pValue = 1.0;
    double diff = 0.0;
    double seDiff = 0.0;
    double reducedFormNumerator = 0.0;
    double seNumerator = 0.0;
    double statisticPlugin = 0.0;
    double statisticCorrected = 0.0;
    bool degenerate = false;
    SeRegime regime = SeRegime::plugin;

    nlohmann::json to_json() const;
};

DwhResult dwh_test(const ResidualizedFrame& rf, const CondMeanFit& cm, SeRegime regime);

struct GapSes {
    double covariate = 0.0, treatmentLevel = 0.0, marginalEffect = 0.0, total = 0.0;
};

GapSes gap_component_ses(const Eigen::Matrix4d& vcov);

double normal_two_sided_p(double t);

}  // namespace ivgap
