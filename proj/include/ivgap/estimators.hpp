#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/data.hpp"
#include "ivgap/projection.hpp"

namespace ivgap {

struct CoefEstimate {
    double value = 0.0;
    std::optional<double> se;
    double denominator = 0.0;

    nlohmann::json to_json() const;
};

struct FirstStageFit {
    Eigen::VectorXd pi;          // instrument coefficients
    Eigen::VectorXd wCoef;       // covariate coefficients
    Eigen::VectorXd synthetic;   // fitted value of X on (W, Zraw)
    Eigen::VectorXd zt;          // residualized raw instruments times pi
};

FirstStageFit first_stage_fit(const ModelFrame& frame);
Eigen::VectorXd make_synthetic_instrument(const ModelFrame& frame);

CoefEstimate ols_beta(const ResidualizedFrame& rf);
CoefEstimate iv_beta(const ResidualizedFrame& rf);

struct FirstStageSummary {
    struct Row {
        std::string name;
        double coef = 0, se = 0, t = 0;
    };
    std::vector<Row> instruments;
    std::vector<std::string> wNames;
    Eigen::VectorXd wCoef;
    double robustF = 0.0;
    bool perfectFit = false;
    int clusters = 0;
    std::string statistic = "robust Wald F (not effective F)";

    nlohmann::json to_json() const;
};

FirstStageSummary first_stage_summary(const ModelFrame& frame);

struct SubsampleOls {
    CoefEstimate estimate;
    std::vector<std::string> droppedColumns;
    std::size_t rows = 0;
};

SubsampleOls subsample_ols(const ModelFrame& frame, const std::function<bool(std::size_t)>& keep);

}  // namespace ivgap
