#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/data.hpp"
#include "ivgap/estimators.hpp"
#include "ivgap/projection.hpp"

namespace ivgap {

// weight on the step from the previous support point to `level`; with binning a row
// covers the levels [level, levelHigh]
struct LevelWeight {
    double level = 0.0;
    double levelHigh = 0.0;
    double share = 0.0;  // weighted mass at the covered levels
    double olsWeight = 0.0, olsSe = 0.0;
    double ivWeight = 0.0, ivSe = 0.0;
};

struct WeightProfile {
    Mode mode = Mode::standard;
    double binFloor = 0.0;
    std::vector<LevelWeight> rows;

    nlohmann::json to_json() const;
};

WeightProfile treatment_level_weights(const ResidualizedFrame& rf, double binFloor = 0.0);

struct GroupWeightRow {
    std::string label;
    std::size_t rows = 0;
    double share = 0.0;
    double olsWeight = 0.0, olsSe = 0.0;
    double ivWeight = 0.0, ivSe = 0.0;
    bool projected = false;  // did-rd: group indicator outside span(W), weight uses L(1_G|W)
    std::optional<CoefEstimate> subsampleOls;
    std::string subsampleNote;
};

struct NegativeSummary {
    int count = 0;
    double sum = 0.0;
};

struct GroupTable {
    std::string name;
    std::vector<GroupWeightRow> rows;
    NegativeSummary negativeIv, negativeOls;

    nlohmann::json to_json() const;
};

GroupTable group_weights(const ResidualizedFrame& rf, const Partition& partition, bool subsampleOls = true,
                         const std::string& name = "groups");

NegativeSummary negative_summary(const std::vector<double>& weights);

struct WeightReport {
    WeightProfile profile;
    std::vector<GroupTable> groups;

    nlohmann::json to_json() const;
    std::string levels_csv() const;
    std::string groups_csv() const;
};

WeightReport weight_report(const WeightProfile& profile, const std::vector<GroupTable>& groups);

}  // namespace ivgap
