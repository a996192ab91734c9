#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "ivgap/common.hpp"

namespace ivgap {

class WeightedProjector;

struct NumericColumn {
    std::vector<double> values;
};

struct CategoricalColumn {
    std::vector<int> codes;
    std::vector<std::string> levels;

    // levels sorted numerically when every label is a number, otherwise bytewise
    static CategoricalColumn from_labels(const std::vector<std::string>& labels);
    const std::string& label(std::size_t row) const { return levels[static_cast<std::size_t>(codes[row])]; }
};

using ColumnData = std::variant<NumericColumn, CategoricalColumn>;

enum class ColumnType { numeric, categorical };

class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::string> names, std::vector<ColumnData> columns, std::size_t dropped = 0);

    std::size_t n() const { return n_; }
    std::size_t dropped() const { return dropped_; }
    const std::vector<std::string>& names() const { return names_; }
    bool has(const std::string& name) const;
    const ColumnData& column(const std::string& name) const;
    ColumnType type(const std::string& name) const;
    const std::vector<double>& numeric(const std::string& name) const;
    const CategoricalColumn& categorical(const std::string& name) const;
    // text of a cell; categorical label or shortest numeric form
    std::string text(const std::string& name, std::size_t row) const;

    Dataset subset(const std::vector<std::size_t>& rows) const;

private:
    std::size_t index(const std::string& name) const;
    std::vector<std::string> names_;
    std::vector<ColumnData> columns_;
    std::size_t n_ = 0;
    std::size_t dropped_ = 0;
};

using Schema = std::map<std::string, ColumnType>;

Dataset load_csv(const std::string& path, const Schema& schema);
Dataset parse_csv(const std::string& text, const Schema& schema, const std::string& source = "<memory>");
std::string write_csv(const Dataset& d);

enum class TermKind { intercept, numeric, categorical, interaction, piecewise_linear, polynomial, step };

struct TermSpec {
    TermKind kind = TermKind::numeric;
    std::vector<std::string> columns;
    std::vector<double> knots;       // piecewise-linear knots or step thresholds
    int degree = 1;
    std::vector<std::string> categorical;  // interaction members to dummy-code

    void validate() const;
    static TermSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct DesignMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> names;
};

DesignMatrix expand_terms(const Dataset& d, const std::vector<TermSpec>& terms, bool checkRank = true);

struct GroupSpec {
    std::string name;
    std::vector<std::string> columns;
};

struct ModelConfig {
    std::string outcome;
    std::string treatment;
    std::vector<std::string> instruments;
    std::vector<TermSpec> covariates;
    std::optional<std::string> weights;
    std::optional<std::string> cluster;
    std::string mode = "auto";
    std::vector<std::string> cell;
    nlohmann::json slopeHeterogeneity = "full";
    nlohmann::json basis = nlohmann::json::object();
    std::vector<GroupSpec> groups;

    static ModelConfig from_json(const nlohmann::json& j);
    static ModelConfig load(const std::string& path);
    nlohmann::json to_json() const;
    Schema schema() const;
};

struct ClusterIndex {
    std::vector<int> codes;
    int count = 0;

    static ClusterIndex singletons(std::size_t n);
    static ClusterIndex from_labels(const std::vector<std::string>& labels);
    static ClusterIndex from_codes(const std::vector<int>& raw);
};

struct ModelFrame {
    Eigen::VectorXd y;
    Eigen::VectorXd x;
    Eigen::MatrixXd zraw;
    Eigen::VectorXd weights;
    ClusterIndex clusters;
    Mode mode = Mode::standard;
    std::string outcomeName, treatmentName;
    std::vector<std::string> instrumentNames;
    std::vector<std::string> wNames;
    std::vector<std::string> warnings;
    std::string modeCheck;  // "verified", "forced", "unverifiable", ...
    std::string cellCheck;
    std::size_t droppedRows = 0;
    ModelConfig config;
    std::shared_ptr<const Dataset> data;
    std::shared_ptr<const WeightedProjector> projector;

    std::size_t n() const { return static_cast<std::size_t>(y.size()); }
    const Eigen::MatrixXd& W() const;
    double weightSum() const { return weights.sum(); }
};

struct FrameOptions {
    std::optional<std::string> mode;     // "standard", "did-rd", "auto"
    std::optional<std::string> weights;
    std::optional<std::string> cluster;
};

ModelFrame build_frame(std::shared_ptr<const Dataset> data, const ModelConfig& config,
                       const FrameOptions& opts = {});
ModelFrame build_frame(const Dataset& data, const ModelConfig& config, const FrameOptions& opts = {});

// rows with the same label in the listed columns share a group; labels joined by '|'
struct Partition {
    std::vector<std::string> labels;
    std::vector<int> codes;
};
Partition make_partition(const Dataset& d, const std::vector<std::string>& columns);

}  // namespace ivgap
