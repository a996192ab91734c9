#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "ivgap/data.hpp"
#include "ivgap/synthlab.hpp"

namespace testsupport {

using namespace ivgap;

inline std::string source_path(const std::string& rel) { return std::string(IVGAP_SOURCE_DIR) + "/" + rel; }

// enumeration grid with pmf row weights
inline ModelFrame population_frame(const DiscreteDgp& d, ModelConfig cfg) {
    auto data = std::make_shared<const Dataset>(population_dataset(d));
    cfg.weights = "weight";
    return build_frame(data, cfg);
}
inline ModelFrame population_frame(const DiscreteDgp& d) { return population_frame(d, d.model_config()); }
inline ModelFrame population_frame(const std::string& name) { return population_frame(builtin_dgp(name)); }

inline ModelFrame sample_frame(const DiscreteDgp& d, std::size_t n, std::uint64_t seed) {
    auto data = std::make_shared<const Dataset>(sample(d, n, seed));
    return build_frame(data, d.model_config());
}

struct RandomFrameSpec {
    std::size_t n = 200;
    int groups = 3;         // categorical covariate levels
    int levels = 4;         // treatment support size
    bool weights = true;
    bool clusters = true;
};

// arbitrary data: discrete treatment, numeric and categorical covariates, two instruments
inline std::shared_ptr<const Dataset> random_dataset(std::mt19937_64& rng, const RandomFrameSpec& s) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);
    std::vector<double> y, x, z1, z2, w1, wt;
    std::vector<std::string> g, cl;
    for (std::size_t i = 0; i < s.n; ++i) {
        int gi = static_cast<int>(U(rng) * s.groups);
        double a = N(rng);
        double e1 = N(rng), e2 = N(rng);
        double v = N(rng);
        double lat = 0.8 * e1 + 0.5 * e2 + 0.3 * gi + 0.4 * a + v;
        int lv = std::clamp(static_cast<int>(std::floor((lat + 2.0) / 4.0 * s.levels)), 0, s.levels - 1);
        double xv = lv * 0.5 + (lv > 1 ? 0.25 : 0.0);
        y.push_back(1.0 + 0.7 * xv + 0.2 * xv * xv + 0.5 * a + gi * 0.3 + 0.6 * v + N(rng));
        x.push_back(xv);
        z1.push_back(e1);
        z2.push_back(e2 + 0.2 * a);
        w1.push_back(a);
        wt.push_back(s.weights ? 0.5 + U(rng) : 1.0);
        g.push_back("g" + std::to_string(gi));
        cl.push_back("c" + std::to_string(i % 17));
    }
    std::vector<std::string> names{"y", "x", "z1", "z2", "a", "wt", "g", "cl"};
    std::vector<ColumnData> cols;
    cols.emplace_back(NumericColumn{y});
    cols.emplace_back(NumericColumn{x});
    cols.emplace_back(NumericColumn{z1});
    cols.emplace_back(NumericColumn{z2});
    cols.emplace_back(NumericColumn{w1});
    cols.emplace_back(NumericColumn{wt});
    cols.emplace_back(CategoricalColumn::from_labels(g));
    cols.emplace_back(CategoricalColumn::from_labels(cl));
    return std::make_shared<const Dataset>(std::move(names), std::move(cols));
}

inline ModelConfig random_config(const RandomFrameSpec& s, const std::string& hetero = "full") {
    nlohmann::json j = {{"outcome", "y"},
                        {"treatment", "x"},
                        {"instruments", {"z1", "z2"}},
                        {"covariates",
                         {{{"kind", "intercept"}},
                          {{"kind", "numeric"}, {"column", "a"}},
                          {{"kind", "categorical"}, {"column", "g"}}}},
                        {"slope_heterogeneity", hetero},
                        {"mode", "standard"},
                        {"groups", {{{"name", "g"}, {"columns", {"g"}}}}}};
    if (s.weights) j["weights"] = "wt";
    if (s.clusters) j["cluster"] = "cl";
    return ModelConfig::from_json(j);
}

}  // namespace testsupport
