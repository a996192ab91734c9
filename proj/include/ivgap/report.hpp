#pragma once

#include <array>
#include <map>
#include <string>

#include "json.hpp"

namespace ivgap {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kRngName = "mt19937_64/splitmix64-v1";

// %.17g
std::string format_csv_number(double v);

struct Metadata {
    std::map<std::string, nlohmann::json> fields;

    Metadata();
    Metadata& set(const std::string& key, nlohmann::json value);
    nlohmann::json to_json() const;
    // one "# key=value" line per field
    std::string csv_header() const;
};

struct Table1Input {
    std::array<double, 4> coef{};
    std::array<double, 4> se{};
    std::array<double, 4> diffSe{};  // (2)-(1), (3)-(2), (4)-(3), (4)-(1); negative = not shown
    bool showDiffSe = false;
    int decimals = 3;
};

struct Table1Row {
    std::string label;
    double value = 0.0;
};

// rows "(1)".."(4)" then "(2)-(1)", "(3)-(2)", "(4)-(3)", "(4)-(1)"
std::array<Table1Row, 8> table1_rows(const Table1Input& in);
std::string render_table1(const Table1Input& in);

}  // namespace ivgap
