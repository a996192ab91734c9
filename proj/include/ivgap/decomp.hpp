#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/condmean.hpp"
#include "ivgap/estimators.hpp"
#include "ivgap/inference.hpp"
#include "ivgap/projection.hpp"

namespace ivgap {

CoefEstimate beta_ols_c(const ResidualizedFrame& rf, const SlopeFit& slope);
CoefEstimate beta_ols_cl(const ResidualizedFrame& rf, const CondMeanFit& cm);

struct DecompositionResult {
    Mode mode = Mode::standard;
    SeRegime regime = SeRegime::plugin;
    CoefEstimate betaOls, betaOlsC, betaOlsCL, betaIv;
    double covariateWeightDiff = 0.0;
    double treatmentLevelWeightDiff = 0.0;
    double marginalEffectDiff = 0.0;
    double totalGap = 0.0;
    Eigen::Matrix4d jointVcov = Eigen::Matrix4d::Zero();
    Eigen::Matrix4d vcovPlugin = Eigen::Matrix4d::Zero();
    Eigen::Matrix4d vcovCorrected = Eigen::Matrix4d::Zero();
    GapSes componentSes;
    GapSes componentSesAlt;  // the other regime, diagnostics only
    std::optional<DwhResult> dwh;
    std::size_t n = 0;
    int clusters = 0;
    std::vector<std::string> slopeColumns;
    std::vector<std::string> basisColumns;
    std::vector<std::string> prunedBasisColumns;
    nlohmann::json basis;
    std::vector<std::string> warnings;

    Eigen::Vector4d betas() const { return {betaOls.value, betaOlsC.value, betaOlsCL.value, betaIv.value}; }
    nlohmann::json to_json() const;
};

struct DecomposeOptions {
    std::vector<int> slopeHetero;          // W columns; empty = intercept only
    std::optional<BasisSpec> basis;        // default_basis when absent
    std::optional<SeRegime> regime;        // mode default when absent
    bool dwh = false;
};

DecompositionResult decompose(const ModelFrame& frame, const DecomposeOptions& opts);
// heterogeneity and basis taken from the frame's model configuration
DecompositionResult decompose(const ModelFrame& frame, std::optional<SeRegime> regime = std::nullopt, bool dwh = false);

}  // namespace ivgap
