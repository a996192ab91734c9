#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

namespace ivgap {

enum class BasisKind { constant, linear, hinge, step };

struct BasisTerm {
    BasisKind kind = BasisKind::linear;
    double knot = 0.0;          // hinge knot or step threshold
    std::vector<int> hetero;    // W column indices; {0} is the constant design

    double eval(double x) const {
        switch (kind) {
            case BasisKind::constant: return 1.0;
            case BasisKind::linear: return x;
            case BasisKind::hinge: return x > knot ? x - knot : 0.0;
            case BasisKind::step: return x >= knot ? 1.0 : 0.0;
        }
        return 0.0;
    }
    std::string name() const;
};

// ordered p_k(x) with heterogeneity designs; the constant term is implicit (absorbed by W)
struct BasisSpec {
    std::vector<BasisTerm> terms;
    std::vector<double> support;  // sorted observed treatment levels

    std::size_t size() const { return terms.size(); }
    Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const;
    void validate() const;
    nlohmann::json to_json(const std::vector<std::string>& wNames) const;
};

}  // namespace ivgap
